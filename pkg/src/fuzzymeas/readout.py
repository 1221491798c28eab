"""Random readouts, smoothing, classification and weighted ensemble statistics.

Each generated readout E(t) is integrated with the complex-Hamiltonian
dynamics; its final squared norm is the probability density P[E]. Ensemble
averages are self-normalized importance-sampling estimates with weights
P[E] / q[E], where q is the density the readouts were drawn from.

Two proposals are available:

* ``uniform`` draws every segment i.i.d. from [e_lo, e_hi]. q is constant, so
  the weights are P[E] itself. The window truncates the physical readout
  distribution, so estimates are biased unless the window is wide, and wide
  windows have a tiny effective sample size.
* ``guided`` (default) draws segment k from the mixture
  P1 N(E1, s_k^2) + P2 N(E2, s_k^2), with (P1, P2) the current occupations and
  s_k^2 = 1 / (4 kappa dt_k) the single-segment readout spread. The importance
  correction is exact, so the estimator targets the same P[E].
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DerivedScales,
    NumericalError,
    ReadoutCurve,
    SystemConfig,
    derive_scales,
    grid_edges,
    segment_count,
)
from .io import write_csv
from .rpi import Trajectory, default_step, propagate_batch, segment_propagator

CHUNK_SIZE = 2048
# Fraction of the pulse length used by the causal verdict filter.
VERDICT_FRACTION = 0.7
E_BINS = 48
P2_BINS = 40


@dataclass(frozen=True)
class PriorSpec:
    """Proposal for random readout curves.

    ``e_lo``/``e_hi`` default to [E1 - dE/2, E2 + dE/2]; ``dt`` to T_R / 50.
    """

    kind: str = "guided"
    e_lo: float | None = None
    e_hi: float | None = None
    dt: float | None = None

    def __post_init__(self):
        if self.kind not in ("guided", "uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.e_lo is not None and self.e_hi is not None and self.e_lo >= self.e_hi:
            raise ValueError(f"prior window is empty: [{self.e_lo}, {self.e_hi}]")

    def window(self, config: SystemConfig) -> tuple[float, float]:
        lo = config.e1 - 0.5 * config.delta_e if self.e_lo is None else self.e_lo
        hi = config.e2 + 0.5 * config.delta_e if self.e_hi is None else self.e_hi
        if lo >= hi:
            raise ValueError(f"prior window is empty: [{lo}, {hi}]")
        return lo, hi

    def grid_dt(self, config: SystemConfig) -> float:
        if self.dt is not None:
            return self.dt
        return default_readout_dt(config)


def default_readout_dt(config: SystemConfig) -> float:
    if config.v_amplitude > 0.0:
        return (math.pi / config.v_amplitude) / 50.0
    return config.t_total / 50.0


@dataclass(frozen=True)
class ReadoutSettings:
    """Smoothing windows and histogram layout used when summarizing an ensemble.

    ``smoothing_window`` is the centered boxcar for density plots;
    ``verdict_window`` is the causal boxcar whose value at T decides whether the
    readout points to a transition.
    """

    smoothing_window: float
    verdict_window: float
    e_range: tuple[float, float]
    e_bins: int = E_BINS
    p2_bins: int = P2_BINS

    @classmethod
    def for_config(cls, config: SystemConfig, smoothing_window=None, verdict_window=None):
        pulse = config.pulse_length if config.pulse_length > 0.0 else config.t_total
        de = config.delta_e
        return cls(
            smoothing_window=pulse if smoothing_window is None else smoothing_window,
            verdict_window=VERDICT_FRACTION * pulse if verdict_window is None else verdict_window,
            e_range=(config.e1 - 2.0 * de, config.e2 + 2.0 * de),
        )


def generate_readout(config: SystemConfig, prior: PriorSpec, seed: int) -> ReadoutCurve:
    """Draw a readout with i.i.d. uniform segments from the prior window.

    Only state-independent (uniform) priors can be drawn on their own; guided
    proposals are generated inside ``run_ensemble``.
    """
    if prior.kind != "uniform":
        raise ValueError("only uniform priors generate readouts without a state")
    lo, hi = prior.window(config)
    dt = prior.grid_dt(config)
    rng = np.random.default_rng(seed)
    k = segment_count(config.t_total, dt)
    return ReadoutCurve(dt, rng.uniform(lo, hi, k), config.t_total)


def _cumulative(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    widths = np.diff(edges)
    f = np.zeros(samples.shape[:-1] + (edges.size,))
    f[..., 1:] = np.cumsum(samples * widths, axis=-1)
    return f


def _integral_to(samples: np.ndarray, edges: np.ndarray, f: np.ndarray, t: np.ndarray):
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, edges.size - 2)
    return f[..., idx] + samples[..., idx] * (t - edges[idx])


def window_means(samples: np.ndarray, edges: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Time averages of piecewise-constant rows of ``samples`` over [a_j, b_j]."""
    f = _cumulative(samples, edges)
    return (_integral_to(samples, edges, f, b) - _integral_to(samples, edges, f, a)) / (b - a)


def smooth_samples(samples: np.ndarray, edges: np.ndarray, window: float, mode: str = "centered"):
    """Boxcar smoothing of one or many readouts sharing the grid ``edges``.

    ``centered`` averages over [t - w/2, t + w/2] around each segment center and
    shrinks the window symmetrically near 0 and T. ``trailing`` averages over
    [t - w, t] ending at each segment's right edge (truncated at 0).
    """
    t_total = edges[-1]
    if mode == "centered":
        centers = 0.5 * (edges[:-1] + edges[1:])
        half = np.minimum(0.5 * window, np.minimum(centers, t_total - centers))
        return window_means(samples, edges, centers - half, centers + half)
    if mode == "trailing":
        right = edges[1:]
        left = np.maximum(0.0, right - window)
        return window_means(samples, edges, left, right)
    raise ValueError(f"unknown smoothing mode {mode!r}")


def smooth_readout(curve: ReadoutCurve, window: float, mode: str = "centered") -> ReadoutCurve:
    """Moving boxcar average of ``curve``; a window no wider than dt leaves it unchanged."""
    if not window > 0.0:
        raise ValueError("smoothing window must be positive")
    if mode == "centered" and window <= curve.dt:
        return curve
    smoothed = smooth_samples(curve.samples, curve.edges, window, mode)
    return ReadoutCurve(curve.dt, smoothed, curve.t_total)


@dataclass(frozen=True)
class ClassLabel:
    """Final-state verdict against readout verdict."""

    state_up: bool
    readout_up: bool

    @property
    def valid_positive(self) -> bool:
        return self.state_up and self.readout_up

    @property
    def valid_negative(self) -> bool:
        return not self.state_up and not self.readout_up

    @property
    def is_noise(self) -> bool:
        return self.state_up != self.readout_up


def classify(traj: Trajectory, smoothed: ReadoutCurve, scales: DerivedScales) -> ClassLabel:
    """Transition verdicts: state up iff P2(T) > 1/2, readout up iff E_smoothed(T) > E0.

    Ties count as "no transition".
    """
    if not math.isclose(traj.times[-1], smoothed.t_total, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("trajectory and readout end at different times")
    return ClassLabel(state_up=bool(traj.p2[-1] > 0.5),
                      readout_up=bool(smoothed.samples[-1] > scales.e0))


@dataclass(frozen=True, eq=False)
class Density:
    """Weighted 2-D histogram; each time column sums to one."""

    times: np.ndarray
    value_edges: np.ndarray
    weights: np.ndarray

    @property
    def value_centers(self) -> np.ndarray:
        return 0.5 * (self.value_edges[:-1] + self.value_edges[1:])

    def rows(self):
        vc = self.value_centers
        for i, t in enumerate(self.times):
            for j, v in enumerate(vc):
                yield float(t), float(v), float(self.weights[i, j])

    def write_csv(self, path) -> None:
        write_csv(path, ("t_bin", "value_bin", "weight"), self.rows())

    def mean(self) -> np.ndarray:
        """Weighted mean value per time column."""
        return self.weights @ self.value_centers


def weighted_density(times, values, weights, lo, hi, bins) -> Density:
    """Histogram ``values`` (n, nt) per column with trajectory ``weights`` (n,).

    Values outside [lo, hi] are clipped into the edge bins so mass is conserved.
    """
    values = np.asarray(values, dtype=float)
    n, nt = values.shape
    w = np.asarray(weights, dtype=float)
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(((values - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
    flat = (np.arange(nt)[None, :] * bins + idx).ravel()
    hist = np.bincount(flat, weights=np.repeat(w, nt), minlength=nt * bins).reshape(nt, bins)
    total = w.sum()
    if total > 0.0:
        hist = hist / total
    return Density(np.asarray(times, dtype=float), edges, hist)


@dataclass(frozen=True, eq=False)
class EnsembleSamples:
    """Raw per-trajectory output of a sampler, shared by both samplers.

    ``log_importance`` is log(P[E] / q[E]) up to a constant; ancestral samplers
    use zeros.
    """

    config: SystemConfig
    edges: np.ndarray
    readouts: np.ndarray
    p2: np.ndarray
    log_norm_sq: np.ndarray
    log_importance: np.ndarray
    sampler: str = "rpi-guided"

    @property
    def n(self) -> int:
        return self.readouts.shape[0]

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_importance
        if lw.size == 0 or not np.any(np.isfinite(lw)):
            raise NumericalError("all readout weights underflowed")
        w = np.exp(lw - np.max(lw[np.isfinite(lw)]))
        w[~np.isfinite(w)] = 0.0
        s = w.sum()
        if not s > 0.0:
            raise NumericalError("sum of readout weights underflowed")
        return w / s


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    n_samples: int
    fuzziness_ratio: float
    weights: np.ndarray
    p_transition_state: float
    p_transition_readout: float
    p_stay_readout: float
    noise: float
    false_positive: float
    false_negative: float
    se_transition_state: float
    se_noise: float
    effective_sample_size: float
    density_e: Density
    density_p2: Density
    state_up: np.ndarray = field(repr=False)
    readout_up: np.ndarray = field(repr=False)
    sampler: str = "rpi-guided"

    @property
    def p_valid_pos(self) -> float:
        return self.p_transition_readout

    @property
    def p_valid_neg(self) -> float:
        return self.p_stay_readout

    def stats_row(self) -> tuple:
        return (self.fuzziness_ratio, self.p_transition_state, self.p_valid_pos,
                self.p_valid_neg, self.noise)


STATS_COLUMNS = ("ratio", "p_transition_state", "p_valid_pos", "p_valid_neg", "noise")


def _weighted_se(w: np.ndarray, x: np.ndarray, mean: float) -> float:
    return float(np.sqrt(np.sum(w**2 * (x - mean) ** 2)))


def densities(samples: EnsembleSamples, settings: ReadoutSettings, mask=None):
    """Density histograms of smoothed readouts and of P2, optionally for a subset."""
    w = samples.normalized_weights()
    readouts, p2 = samples.readouts, samples.p2
    if mask is not None:
        w, readouts, p2 = w[mask], readouts[mask], p2[mask]
    edges = samples.edges
    smoothed = smooth_samples(readouts, edges, settings.smoothing_window, "centered")
    centers = 0.5 * (edges[:-1] + edges[1:])
    lo, hi = settings.e_range
    de = weighted_density(centers, smoothed.reshape(-1, centers.size), w, lo, hi, settings.e_bins)
    dp = weighted_density(edges, p2.reshape(-1, edges.size), w, 0.0, 1.0, settings.p2_bins)
    return de, dp


def verdicts(samples: EnsembleSamples, settings: ReadoutSettings):
    """(state_up, readout_up) boolean arrays for every trajectory."""
    e_final = smooth_samples(samples.readouts, samples.edges, settings.verdict_window,
                             "trailing")[:, -1]
    return samples.p2[:, -1] > 0.5, e_final > samples.config.e0


def summarize(samples: EnsembleSamples, settings: ReadoutSettings | None = None) -> EnsembleStats:
    settings = settings or ReadoutSettings.for_config(samples.config)
    w = samples.normalized_weights()
    state_up, readout_up = verdicts(samples, settings)
    p_state = float(w[state_up].sum())
    vp = float(w[state_up & readout_up].sum())
    vn = float(w[~state_up & ~readout_up].sum())
    fp = float(w[~state_up & readout_up].sum())
    fn = float(w[state_up & ~readout_up].sum())
    noise_ind = (state_up != readout_up).astype(float)
    noise = fp + fn
    de, dp = densities(samples, settings)
    return EnsembleStats(
        n_samples=samples.n,
        fuzziness_ratio=derive_scales(samples.config).fuzziness_ratio,
        weights=np.exp(samples.log_norm_sq),
        p_transition_state=p_state,
        p_transition_readout=vp,
        p_stay_readout=vn,
        noise=noise,
        false_positive=fp,
        false_negative=fn,
        se_transition_state=_weighted_se(w, state_up.astype(float), p_state),
        se_noise=_weighted_se(w, noise_ind, noise),
        effective_sample_size=float(1.0 / np.sum(w**2)),
        density_e=de,
        density_p2=dp,
        state_up=state_up,
        readout_up=readout_up,
        sampler=samples.sampler,
    )


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream for a fixed block of trajectories; independent of thread count."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def chunk_sizes(n: int, size: int = CHUNK_SIZE) -> list[int]:
    return [min(size, n - i) for i in range(0, n, size)]


def run_chunks(fn, n: int, seed: int, threads: int = 1) -> list:
    """Call ``fn(count, rng)`` per fixed-size chunk and return results in chunk order."""
    tasks = [(count, chunk_rng(seed, c)) for c, count in enumerate(chunk_sizes(n))]
    if threads <= 1 or len(tasks) == 1:
        return [fn(count, rng) for count, rng in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: fn(*a), tasks))


def _uniform_chunk(config, prior, edges, count, rng):
    lo, hi = prior.window(config)
    readouts = rng.uniform(lo, hi, (count, edges.size - 1))
    states, log_norm = propagate_batch(config, readouts, edges, np.array([1.0, 0.0]))
    final = log_norm[:, -1]
    return readouts, np.abs(states[..., 1]) ** 2, final, final.copy()


def _guided_chunk(config, edges, count, rng):
    k = edges.size - 1
    widths = np.diff(edges)
    max_step = default_step(config, float(widths.max()))
    psi = np.zeros((count, 2), dtype=complex)
    psi[:, 0] = 1.0
    readouts = np.empty((count, k))
    p2 = np.empty((count, k + 1))
    p2[:, 0] = 0.0
    log_norm = np.zeros(count)
    log_q = np.zeros(count)
    for j in range(k):
        sigma = math.sqrt(1.0 / (4.0 * config.kappa * widths[j]))
        occ2 = np.abs(psi[:, 1]) ** 2
        upper = rng.random(count) < occ2
        e = np.where(upper, config.e2, config.e1) + sigma * rng.standard_normal(count)
        readouts[:, j] = e
        g1 = np.exp(-((e - config.e1) ** 2) / (2.0 * sigma**2))
        g2 = np.exp(-((e - config.e2) ** 2) / (2.0 * sigma**2))
        log_q += np.log((1.0 - occ2) * g1 + occ2 * g2)
        u = segment_propagator(config, e, edges[j], edges[j + 1], max_step)
        psi = np.einsum("nij,nj->ni", u, psi)
        nrm = np.sum(np.abs(psi) ** 2, axis=1)
        if not np.all(np.isfinite(nrm)) or np.any(nrm <= 0.0):
            raise NumericalError(f"state norm became {nrm.min()!r} in segment {j}")
        psi /= np.sqrt(nrm)[:, None]
        log_norm += np.log(nrm)
        p2[:, j + 1] = np.abs(psi[:, 1]) ** 2
    return readouts, p2, log_norm, log_norm - log_q


def sample_ensemble(
    config: SystemConfig, prior: PriorSpec | None, n: int, seed: int, threads: int = 1
) -> EnsembleSamples:
    """Draw ``n`` readouts, integrate each, and return per-trajectory results."""
    if n < 1:
        raise ValueError("need at least one trajectory")
    prior = prior or PriorSpec()
    edges = grid_edges(config.t_total, prior.grid_dt(config))
    kind = prior.kind
    if kind == "guided" and config.kappa == 0.0:
        # no measurement: every readout has P[E] = 1 and no preferred spread
        kind = "uniform"
    if kind == "guided":
        parts = run_chunks(lambda c, r: _guided_chunk(config, edges, c, r), n, seed, threads)
    else:
        parts = run_chunks(lambda c, r: _uniform_chunk(config, prior, edges, c, r), n, seed,
                           threads)
    readouts, p2, log_norm, log_imp = (np.concatenate(x) for x in zip(*parts))
    return EnsembleSamples(config, edges, readouts, p2, log_norm, log_imp,
                           sampler=f"rpi-{kind}")


def run_ensemble(
    config: SystemConfig,
    prior: PriorSpec | None = None,
    n: int = 10_000,
    seed: int = 0,
    threads: int = 1,
    settings: ReadoutSettings | None = None,
) -> EnsembleStats:
    """Weighted class probabilities and density plots for ``n`` random readouts.

    Deterministic for a given seed, independent of ``threads``.

    Raises:
        NumericalError: If the weights underflow or a state becomes non-finite.
    """
    samples = sample_ensemble(config, prior, n, seed, threads)
    return summarize(samples, settings)


def write_stats_csv(path, stats_list) -> None:
    write_csv(path, STATS_COLUMNS, (s.stats_row() for s in stats_list))
