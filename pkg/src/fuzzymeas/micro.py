"""Microscopic measurement model: sequences of weak binary observations.

Each elementary observation multiplies the level amplitudes by (u1, u2) on a
positive meter result and by (u1', u2') on a negative one, where

    u1 = sqrt(p1) e^{i chi},      u2 = sqrt(p2) e^{-i chi},
    u1' = sqrt(1-p1) e^{-i chi'}, u2' = sqrt(1-p2) e^{i chi'}.

Between observations (period tau) the driving pulse rotates the pair by
exp(-i v tau sigma_1). Blocks of N consecutive observations form one readout
point through n = N+/N and the affine map E = E0 + dE (n - p0) / dp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AmplitudePair,
    DerivedScales,
    NumericalError,
    ReadoutCurve,
    SystemConfig,
    derive_scales,
    grid_edges,
)
from .readout import EnsembleSamples, default_readout_dt, run_chunks
from .rpi import Trajectory

FEASIBILITY_THRESHOLDS = (0.1, 10.0, 0.1)


@dataclass(frozen=True)
class ElementaryModel:
    """Meter statistics of one elementary observation.

    Args:
        p1: Probability of a positive result on level 1.
        p2: Probability of a positive result on level 2.
        tau: Period between observations.
        chi: Phase of the positive-result amplitudes.
        chi_prime: Phase of the negative-result amplitudes.
    """

    p1: float
    p2: float
    tau: float
    chi: float = 0.0
    chi_prime: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {p}")
        if not (math.isfinite(self.tau) and self.tau > 0.0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not (math.isfinite(self.chi) and math.isfinite(self.chi_prime)):
            raise ValueError("phases must be finite")

    @property
    def p0(self) -> float:
        return 0.5 * (self.p1 + self.p2)

    @property
    def delta_p(self) -> float:
        return self.p2 - self.p1

    def positive_amplitudes(self) -> np.ndarray:
        return np.array([math.sqrt(self.p1) * np.exp(1j * self.chi),
                         math.sqrt(self.p2) * np.exp(-1j * self.chi)])

    def negative_amplitudes(self) -> np.ndarray:
        return np.array([math.sqrt(1.0 - self.p1) * np.exp(-1j * self.chi_prime),
                         math.sqrt(1.0 - self.p2) * np.exp(1j * self.chi_prime)])

    def require_resolving(self) -> None:
        if self.delta_p == 0.0:
            raise ValueError("p1 == p2: observations carry no information about the level")


@dataclass(frozen=True)
class SeriesRecord:
    n_total: int
    n_plus: int
    n_ratio: float
    energy: float

    def __post_init__(self):
        if not 0 <= self.n_plus <= self.n_total:
            raise ValueError("need 0 <= n_plus <= n_total")


def _positive(outcome) -> bool:
    if outcome in (True, 1, "+"):
        return True
    if outcome in (False, -1, 0, "-"):
        return False
    raise ValueError(f"unrecognized outcome {outcome!r}")


def _level_weights(state: AmplitudePair) -> tuple[float, float]:
    if state.norm_sq == 0.0:
        raise ValueError("state must be nonzero")
    return state.p1, state.p2


def positive_probability(state: AmplitudePair, model: ElementaryModel) -> float:
    """Probability of a positive meter result, p1 P1 + p2 P2."""
    w1, w2 = _level_weights(state)
    return model.p1 * w1 + model.p2 * w2


def elementary_update(state: AmplitudePair, outcome, model: ElementaryModel) -> AmplitudePair:
    """Unnormalized state after one observation with result ``outcome`` (+/-)."""
    u = model.positive_amplitudes() if _positive(outcome) else model.negative_amplitudes()
    return AmplitudePair(complex(state.c1 * u[0]), complex(state.c2 * u[1]))


def series_amplitude_selective(model: ElementaryModel, outcomes) -> tuple[complex, complex]:
    """Product of elementary amplitudes for a known, ordered outcome sequence."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("outcome sequence must be nonempty")
    u, w = model.positive_amplitudes(), model.negative_amplitudes()
    total = np.ones(2, dtype=complex)
    for o in outcomes:
        total = total * (u if _positive(o) else w)
    return complex(total[0]), complex(total[1])


def log_binomial(n_total, n_plus):
    """log C(N, N+), elementwise for integer arrays."""
    n_plus = np.asarray(n_plus)
    lg = np.vectorize(math.lgamma, otypes=[float])
    return lg(n_total + 1.0) - lg(n_plus + 1.0) - lg(n_total - n_plus + 1.0)


def _log_pmf(p: float, n_plus, n_total):
    k = np.asarray(n_plus, dtype=float)
    return log_binomial(n_total, k) + k * math.log(p) + (n_total - k) * math.log1p(-p)


def _check_counts(n_plus, n_total) -> None:
    k = np.asarray(n_plus)
    if n_total < 0 or np.any(k < 0) or np.any(k > n_total):
        raise ValueError(f"need 0 <= n_plus <= n_total, got {n_plus}, {n_total}")


def series_amplitude_unordered(model: ElementaryModel, n_plus, n_total: int):
    """Amplitudes for N+ positives in N observations, order not recorded.

    The selective amplitude times sqrt(C(N, N+)); squared moduli are the
    binomial pmfs in p1 and p2. Evaluated in log space so large N is safe.
    Accepts an array of ``n_plus``.
    """
    _check_counts(n_plus, n_total)
    k = np.asarray(n_plus, dtype=float)
    phase = k * model.chi - (n_total - k) * model.chi_prime
    u1 = np.exp(0.5 * _log_pmf(model.p1, k, n_total) + 1j * phase)
    u2 = np.exp(0.5 * _log_pmf(model.p2, k, n_total) - 1j * phase)
    if u1.ndim == 0:
        return complex(u1), complex(u2)
    return u1, u2


def series_outcome_probability(state: AmplitudePair, model: ElementaryModel, n_plus, n_total):
    """P(N+, N) = C(N, N+) [P1 p1^N+ (1-p1)^(N-N+) + P2 p2^N+ (1-p2)^(N-N+)]."""
    _check_counts(n_plus, n_total)
    w1, w2 = _level_weights(state)
    out = w1 * np.exp(_log_pmf(model.p1, n_plus, n_total)) + w2 * np.exp(
        _log_pmf(model.p2, n_plus, n_total))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_series_amplitude(model: ElementaryModel, n_ratio, n_total: int):
    """Gaussian limit of ``series_amplitude_unordered`` at n = N+/N.

    |U_i| = N_i exp(-N (n - p_i)^2 / (4 p_i (1 - p_i))) with
    N_i^2 = 1 / sqrt(2 pi N p_i (1 - p_i)), so |U_i|^2 is the normal density
    approximating the binomial pmf pointwise.
    """
    n = np.asarray(n_ratio, dtype=float)
    phase = n_total * (n * model.chi - (1.0 - n) * model.chi_prime)
    out = []
    for p, sign in ((model.p1, 1.0), (model.p2, -1.0)):
        var = p * (1.0 - p)
        norm = (2.0 * math.pi * n_total * var) ** -0.25
        out.append(norm * np.exp(-n_total * (n - p) ** 2 / (4.0 * var) + sign * 1j * phase))
    if n.ndim == 0:
        return complex(out[0]), complex(out[1])
    return out[0], out[1]


def n_to_energy(n_ratio, model: ElementaryModel, scales: DerivedScales):
    """E = E0 + dE (n - p0) / dp; values outside [p1, p2] extrapolate linearly."""
    model.require_resolving()
    return scales.e0 + scales.delta_e * (np.asarray(n_ratio, dtype=float) - model.p0) / (
        model.delta_p)


def level_resolution_time(model: ElementaryModel, scales: DerivedScales) -> tuple[float, float]:
    """(T_lr, kappa) implied by the observation statistics.

    T_lr = tau 4 p0 (1 - p0) / dp^2 and kappa = 1 / (T_lr dE^2).
    """
    model.require_resolving()
    p0 = model.p0
    t_lr = model.tau * 4.0 * p0 * (1.0 - p0) / model.delta_p**2
    return t_lr, 1.0 / (t_lr * scales.delta_e**2)


def concrete_model_params(g: float, a_sq: float, b: float, tau: float) -> ElementaryModel:
    """Observation statistics of a meter coupled through V (1 - g sigma_3).

    The positive branch is a (1 - g sigma_3) and the negative branch
    exp(i b g sigma_3), so p1 = |a|^2 (1 - g)^2, p2 = |a|^2 (1 + g)^2,
    chi = 0 (real a) and chi' = -b g.
    """
    if g == 0.0:
        raise ValueError("g = 0 gives p1 == p2: observations carry no information")
    if a_sq <= 0.0:
        raise ValueError("|a|^2 must be positive")
    p1 = a_sq * (1.0 - g) ** 2
    p2 = a_sq * (1.0 + g) ** 2
    if not (0.0 < p1 < 1.0 and 0.0 < p2 < 1.0):
        raise ValueError(f"g={g}, |a|^2={a_sq} give probabilities outside (0, 1): {p1}, {p2}")
    return ElementaryModel(p1=p1, p2=p2, tau=tau, chi=0.0, chi_prime=-b * g)


def concrete_resolution_time(g: float, a_sq: float, tau: float) -> float:
    """Leading-order resolution time tau / (4 g^2 |a|^2) of the concrete meter."""
    return tau / (4.0 * g**2 * a_sq)


@dataclass(frozen=True)
class FeasibilityReport:
    """Dimensionless validity ratios of the continuous description."""

    series_ratio: float
    continuity_ratio: float
    phase_ratio: float
    thresholds: tuple[float, float, float] = FEASIBILITY_THRESHOLDS

    @property
    def series_ok(self) -> bool:
        return self.series_ratio <= self.thresholds[0]

    @property
    def continuity_ok(self) -> bool:
        return self.continuity_ratio >= self.thresholds[1]

    @property
    def phase_ok(self) -> bool:
        return self.phase_ratio <= self.thresholds[2]

    @property
    def ok(self) -> bool:
        return self.series_ok and self.continuity_ok and self.phase_ok

    def text(self) -> str:
        def line(name, value, rel, limit, ok):
            return f"{name} = {value!r} (need {rel} {limit!r}): {'pass' if ok else 'FAIL'}"

        lo, mid, hi = self.thresholds
        return "\n".join([
            line("N^2*dp*v*tau/sqrt(p0)", self.series_ratio, "<=", lo, self.series_ok),
            line("p0/dp^2", self.continuity_ratio, ">=", mid, self.continuity_ok),
            line("g*b*T/tau", self.phase_ratio, "<=", hi, self.phase_ok),
            f"overall: {'pass' if self.ok else 'FAIL'}",
        ]) + "\n"


def feasibility_check(
    model: ElementaryModel,
    scales: DerivedScales,
    n_total: int,
    g: float | None = None,
    b: float | None = None,
    t_total: float = 0.0,
    thresholds=FEASIBILITY_THRESHOLDS,
) -> FeasibilityReport:
    """Evaluate the three validity ratios for an N-series simulation.

    Without ``g`` and ``b`` the phase term uses |chi'|, which equals g b for the
    concrete meter.
    """
    model.require_resolving()
    dp = abs(model.delta_p)
    series = n_total**2 * dp * scales.v_amplitude * model.tau / math.sqrt(model.p0)
    gb = abs(model.chi_prime) if g is None or b is None else abs(g * b)
    return FeasibilityReport(
        series_ratio=series,
        continuity_ratio=model.p0 / dp**2,
        phase_ratio=gb * t_total / model.tau,
        thresholds=tuple(thresholds),
    )


def observation_count(config: SystemConfig, model: ElementaryModel) -> int:
    """Number of observations M with M tau = T; rejects a non-integer T / tau."""
    m = int(round(config.t_total / model.tau))
    if m < 1 or not math.isclose(m * model.tau, config.t_total, rel_tol=1e-9):
        raise ValueError(f"T = {config.t_total} is not a whole number of periods tau = {model.tau}")
    return m


def rotation_angles(config: SystemConfig, model: ElementaryModel, m: int) -> np.ndarray:
    """v times the pulse overlap of each inter-observation interval [j tau, (j+1) tau]."""
    start = np.arange(m) * model.tau
    overlap = np.clip(np.minimum(start + model.tau, config.t2) - np.maximum(start, config.t1),
                      0.0, None)
    return config.v_amplitude * overlap


def _simulate(config, model, n_per_series, count, rng, record_path=False):
    """Ancestral simulation of ``count`` independent observation sequences.

    Returns (ratios (count, S), p2 at series edges (count, S+1), log record
    probability (count,), optional per-observation states).
    """
    model.require_resolving()
    if n_per_series < 1:
        raise ValueError("series length must be at least 1")
    m = observation_count(config, model)
    angles = rotation_angles(config, model, m)
    cos, sin = np.cos(angles), np.sin(angles)
    u, w = model.positive_amplitudes(), model.negative_amplitudes()
    n_series = -(-m // n_per_series)
    psi = np.zeros((count, 2), dtype=complex)
    psi[:, 0] = 1.0
    log_prob = np.zeros(count)
    plus = np.zeros((count, n_series))
    p2 = np.empty((count, n_series + 1))
    p2[:, 0] = 0.0
    path = np.empty((m + 1, count, 2), dtype=complex) if record_path else None
    path_log = np.zeros((m + 1, count)) if record_path else None
    if record_path:
        path[0] = psi
    for j in range(m):
        occ2 = np.abs(psi[:, 1]) ** 2
        p = model.p1 * (1.0 - occ2) + model.p2 * occ2
        pos = rng.random(count) < p
        plus[:, j // n_per_series] += pos
        psi = psi * np.where(pos[:, None], u, w)
        nrm = np.sum(np.abs(psi) ** 2, axis=1)
        if np.any(nrm <= 0.0) or not np.all(np.isfinite(nrm)):
            raise NumericalError(f"state vanished at observation {j}")
        psi /= np.sqrt(nrm)[:, None]
        log_prob += np.log(nrm)
        if angles[j] != 0.0:
            c1 = cos[j] * psi[:, 0] - 1j * sin[j] * psi[:, 1]
            c2 = cos[j] * psi[:, 1] - 1j * sin[j] * psi[:, 0]
            psi = np.stack([c1, c2], axis=1)
        if record_path:
            path[j + 1] = psi
            path_log[j + 1] = log_prob
        if (j + 1) % n_per_series == 0 or j + 1 == m:
            p2[:, -(-(j + 1) // n_per_series)] = np.abs(psi[:, 1]) ** 2
    sizes = np.full(n_series, n_per_series, dtype=float)
    sizes[-1] = m - n_per_series * (n_series - 1)
    return plus, sizes, p2, log_prob, (path, path_log)


def micro_trajectory(
    config: SystemConfig, model: ElementaryModel, n_per_series: int, seed: int
) -> tuple[ReadoutCurve, Trajectory, list[SeriesRecord]]:
    """Simulate one observation sequence through the whole measurement.

    The readout has dt = N tau (the last series is shorter if N does not divide
    the number of observations). The trajectory holds the normalized state after
    every observation and the log probability of the outcomes so far.
    """
    scales = derive_scales(config)
    rng = np.random.default_rng(seed)
    plus, sizes, _, _, (path, path_log) = _simulate(config, model, n_per_series, 1, rng,
                                                   record_path=True)
    ratios = plus[0] / sizes
    energies = n_to_energy(ratios, model, scales)
    records = [SeriesRecord(int(s), int(k), float(r), float(e))
               for s, k, r, e in zip(sizes, plus[0], ratios, energies)]
    readout = ReadoutCurve(n_per_series * model.tau, energies, config.t_total)
    times = np.arange(path.shape[0]) * model.tau
    times[-1] = config.t_total
    traj = Trajectory(times=times, states=path[:, 0], log_norm_sq=path_log[:, 0])
    return readout, traj, records


@dataclass(frozen=True, eq=False)
class MicroEnsemble:
    samples: EnsembleSamples
    ratios: np.ndarray = field(repr=False)


def micro_ensemble(
    config: SystemConfig,
    model: ElementaryModel,
    n_per_series: int,
    n: int,
    seed: int,
    threads: int = 1,
) -> MicroEnsemble:
    """Ancestral ensemble: every trajectory is a draw from the physical readout law.

    All importance weights are equal, so the result plugs into
    ``readout.summarize`` like an RPI ensemble.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    scales = derive_scales(config)

    def chunk(count, rng):
        plus, sizes, p2, log_prob, _ = _simulate(config, model, n_per_series, count, rng)
        return plus / sizes, p2, log_prob

    parts = run_chunks(chunk, n, seed, threads)
    ratios, p2, log_prob = (np.concatenate(x) for x in zip(*parts))
    energies = n_to_energy(ratios, model, scales)
    edges = grid_edges(config.t_total, n_per_series * model.tau)
    samples = EnsembleSamples(config, edges, energies, p2, log_prob, np.zeros(n),
                              sampler="micro-ancestral")
    return MicroEnsemble(samples, ratios)


def mean_energy(state: AmplitudePair, scales: DerivedScales,
                model: ElementaryModel | None = None) -> float:
    """Quantum mean E1 P1 + E2 P2.

    With ``model``, also checks (E - E0)/dE == (n - p0)/dp for the mean ratio n.

    Raises:
        NumericalError: If the affine relation is violated beyond rounding.
    """
    w1, w2 = _level_weights(state)
    e1 = scales.e0 - 0.5 * scales.delta_e
    e2 = scales.e0 + 0.5 * scales.delta_e
    e_bar = e1 * w1 + e2 * w2
    if model is not None:
        lhs = (e_bar - scales.e0) / scales.delta_e
        rhs = (positive_probability(state, model) - model.p0) / model.delta_p
        if abs(lhs - rhs) > 1e-12 * max(1.0, abs(lhs)):
            raise NumericalError(f"mean relation violated: {lhs!r} vs {rhs!r}")
    return e_bar


def model_for_config(config: SystemConfig, p0: float = 0.5, dp: float = 0.1,
                     chi: float = 0.0, chi_prime: float = 0.0) -> ElementaryModel:
    """Observation model whose resolution time matches ``config.kappa``.

    tau is rounded so that T / tau is an integer; dp is then adjusted to keep the
    implied kappa exact.
    """
    if config.kappa <= 0.0:
        raise ValueError("a resolving observation model needs kappa > 0")
    t_lr = 1.0 / (config.kappa * config.delta_e**2)
    tau = t_lr * dp**2 / (4.0 * p0 * (1.0 - p0))
    m = max(1, int(round(config.t_total / tau)))
    tau = config.t_total / m
    dp = math.sqrt(4.0 * p0 * (1.0 - p0) * tau / t_lr)
    return ElementaryModel(p1=p0 - 0.5 * dp, p2=p0 + 0.5 * dp, tau=tau, chi=chi,
                           chi_prime=chi_prime)


def default_series_length(config: SystemConfig, model: ElementaryModel,
                          limit: float = FEASIBILITY_THRESHOLDS[0]) -> int:
    """Observations per readout point: about T_R/50 of them, capped by the series ratio."""
    n = max(1, int(round(default_readout_dt(config) / model.tau)))
    scale = abs(model.delta_p) * config.v_amplitude * model.tau / math.sqrt(model.p0)
    if scale > 0.0:
        n = min(n, max(1, int(math.floor(math.sqrt(limit / scale)))))
    return n
