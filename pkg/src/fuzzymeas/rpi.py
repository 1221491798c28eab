"""Complex-Hamiltonian (restricted path integral) dynamics for a given readout.

In the rotating basis the amplitudes obey

    dC1/dt = -i v(t) C2 - kappa (E1 - E(t))^2 C1
    dC2/dt = -i v(t) C1 - kappa (E2 - E(t))^2 C2

with v(t) = v on [t1, t2] and zero elsewhere. The readout E(t) is piecewise
constant, so the generator is constant between breakpoints (readout edges,
t1, t2). On such an interval a fixed-step classical RK4 step is the matrix
polynomial I + X + X^2/2 + X^3/6 + X^4/24 with X = h*M, and n steps are its
n-th power; this is what ``rk4_propagator`` evaluates, batched over readouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AmplitudePair, NumericalError, ReadoutCurve, SystemConfig
from .io import write_csv

# Largest RK4 step as a fraction of the Rabi period and of a readout segment.
RABI_STEP_FRACTION = 1e-3
SEGMENT_SUBSTEPS = 8
# Beyond this many RK4 steps per piece the readout is treated as unusable.
MAX_STEPS = 1_000_000
# Largest h*|M| per step; keeps the RK4 polynomial accurate for readouts far from the levels.
STIFF_STEP = 0.1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State path sampled on the readout grid.

    ``states`` are normalized; the unnormalized amplitudes are
    ``states * sqrt(norm_sq)``. The log of the squared norm is kept so that long
    or strongly measured records do not underflow.
    """

    times: np.ndarray
    states: np.ndarray
    log_norm_sq: np.ndarray

    @property
    def norm_sq(self) -> np.ndarray:
        return np.exp(self.log_norm_sq)

    @property
    def p2(self) -> np.ndarray:
        c2 = self.states[:, 1]
        return c2.real**2 + c2.imag**2

    @property
    def amplitudes(self) -> np.ndarray:
        return self.states * np.sqrt(self.norm_sq)[:, None]

    def amplitude(self, i: int) -> AmplitudePair:
        return AmplitudePair.from_array(self.amplitudes[i])

    @property
    def final(self) -> AmplitudePair:
        return self.amplitude(-1)


def default_step(config: SystemConfig, segment: float) -> float:
    step = segment / SEGMENT_SUBSTEPS
    if config.v_amplitude > 0.0:
        step = min(step, RABI_STEP_FRACTION * math.pi / config.v_amplitude)
    return step


def generator(config: SystemConfig, energies, driven) -> np.ndarray:
    """Batched 2x2 generators M for readout values ``energies``.

    ``driven`` is a bool or a boolean array broadcastable against ``energies``.
    """
    e = np.asarray(energies, dtype=float)
    m = np.zeros(e.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = -config.kappa * (config.e1 - e) ** 2
    m[..., 1, 1] = -config.kappa * (config.e2 - e) ** 2
    off = -1j * config.v_amplitude * np.broadcast_to(np.asarray(driven, dtype=float), e.shape)
    m[..., 0, 1] = off
    m[..., 1, 0] = off
    return m


def step_counts(m: np.ndarray, length, max_step: float) -> np.ndarray:
    """RK4 steps per interval: at most ``max_step`` long and with h*|M| <= STIFF_STEP."""
    rate = np.max(np.abs(m), axis=(-2, -1))
    length = np.broadcast_to(np.asarray(length, dtype=float), rate.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        n = np.maximum(np.ceil(length / max_step - 1e-9),
                       np.ceil(length * rate / STIFF_STEP - 1e-9))
    if not np.all(n <= MAX_STEPS):
        raise NumericalError("readout too far from the levels: damping rate is not resolvable")
    return np.maximum(n, 1).astype(np.int64)


def rk4_propagator(m: np.ndarray, length, max_step: float) -> np.ndarray:
    """Propagators of n fixed RK4 steps of size length/n for constant generators ``m``.

    ``m`` has shape (..., 2, 2); ``length`` broadcasts against ``m.shape[:-2]``.
    Each interval picks its own n, so results do not depend on batch neighbours.
    """
    length = np.broadcast_to(np.asarray(length, dtype=float), m.shape[:-2])
    n = step_counts(m, length, max_step)
    x = m * (length / n)[..., None, None]
    x2 = x @ x
    x3 = x2 @ x
    step = np.eye(2, dtype=complex) + x + x2 / 2.0 + x3 / 6.0 + (x3 @ x) / 24.0
    out = np.empty_like(step)
    for count in np.unique(n):
        sel = n == count
        out[sel] = np.linalg.matrix_power(step[sel], int(count))
    out[length <= 0.0] = np.eye(2)
    return out


def sub_intervals(config: SystemConfig, edges: np.ndarray):
    """Split readout segments at the pulse edges.

    Returns (segment index, length, driven) arrays, one entry per piece.
    """
    edges = np.asarray(edges, dtype=float)
    inner = [t for t in (config.t1, config.t2) if edges[0] < t < edges[-1]]
    points = np.union1d(edges, inner)
    mid = 0.5 * (points[:-1] + points[1:])
    seg = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, edges.size - 2)
    driven = (config.v_amplitude > 0.0) & (config.t1 <= mid) & (mid <= config.t2)
    return seg, np.diff(points), driven


def segment_propagator(
    config: SystemConfig, energies, a: float, b: float, max_step: float
) -> np.ndarray:
    """Propagator over [a, b] for constant readout values, splitting at the pulse edges."""
    energies = np.asarray(energies, dtype=float)
    _, lengths, driven = sub_intervals(config, np.array([a, b]))
    total = np.broadcast_to(np.eye(2, dtype=complex), energies.shape + (2, 2)).copy()
    for length, drv in zip(lengths, driven):
        total = rk4_propagator(generator(config, energies, drv), length, max_step) @ total
    return total


def _chain_batch(props, last, psi, k):
    """Apply piece propagators in order, renormalizing at every segment end."""
    n = psi.shape[0]
    states = np.empty((n, k + 1, 2), dtype=complex)
    norms = np.ones((n, k + 1))
    states[:, 0] = psi
    c1, c2 = psi[:, 0].copy(), psi[:, 1].copy()
    j = 0
    with np.errstate(all="ignore"):
        for i in range(props.shape[1]):
            u = props[:, i]
            c1, c2 = u[:, 0, 0] * c1 + u[:, 0, 1] * c2, u[:, 1, 0] * c1 + u[:, 1, 1] * c2
            if last[i]:
                j += 1
                nrm = c1.real**2 + c1.imag**2 + c2.real**2 + c2.imag**2
                scale = 1.0 / np.sqrt(nrm)
                c1 = c1 * scale
                c2 = c2 * scale
                states[:, j, 0] = c1
                states[:, j, 1] = c2
                norms[:, j] = nrm
    return states, norms


def _chain_single(props, last, psi, k):
    """Scalar version of ``_chain_batch`` for one trajectory; avoids numpy call overhead."""
    mats = props[0].tolist()
    c1, c2 = complex(psi[0, 0]), complex(psi[0, 1])
    out = [(c1, c2)]
    norms = [1.0]
    for ((a, b), (c, d)), end in zip(mats, last.tolist()):
        c1, c2 = a * c1 + b * c2, c * c1 + d * c2
        if end:
            nrm = c1.real**2 + c1.imag**2 + c2.real**2 + c2.imag**2
            if not 0.0 < nrm < math.inf:
                norms.append(nrm if nrm == nrm else math.nan)
                out.append((c1, c2))
                break
            scale = 1.0 / math.sqrt(nrm)
            c1 *= scale
            c2 *= scale
            out.append((c1, c2))
            norms.append(nrm)
    norms += [math.nan] * (k + 1 - len(norms))
    out += [(math.nan, math.nan)] * (k + 1 - len(out))
    return np.array(out, dtype=complex)[None], np.array(norms)[None]


def propagate_batch(
    config: SystemConfig,
    samples: np.ndarray,
    edges: np.ndarray,
    initial: np.ndarray,
    max_step: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate many readouts on a shared grid.

    Args:
        config: System parameters.
        samples: Readout values, shape (n, K).
        edges: Grid edges, shape (K + 1,).
        initial: Initial amplitudes, shape (n, 2) or (2,); normalized on entry.
        max_step: RK4 step cap; defaults to ``default_step`` for the grid.

    Returns:
        Normalized states, shape (n, K + 1, 2), and log squared norms, shape (n, K + 1).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, k = samples.shape
    if max_step is None:
        max_step = default_step(config, float(np.max(np.diff(edges))))
    psi = np.broadcast_to(np.asarray(initial, dtype=complex), (n, 2)).copy()
    norm0 = np.sqrt(np.sum(np.abs(psi) ** 2, axis=1))
    if np.any(norm0 == 0.0):
        raise ValueError("initial state must be nonzero")
    psi /= norm0[:, None]
    seg, lengths, driven = sub_intervals(config, edges)
    props = rk4_propagator(generator(config, samples[:, seg], driven[None, :]),
                           lengths[None, :], max_step)
    last = np.r_[seg[1:] != seg[:-1], True]
    chain = _chain_single if n == 1 else _chain_batch
    states, norms = chain(props, last, psi, k)
    bad = ~np.isfinite(norms) | (norms <= 0.0)
    if np.any(bad):
        j = int(np.argmax(np.any(bad, axis=0))) - 1
        raise NumericalError(f"state norm underflowed or became non-finite in segment {j}")
    log_norm = np.cumsum(np.log(norms), axis=1)
    return states, log_norm


def integrate_rpi(
    config: SystemConfig,
    readout: ReadoutCurve,
    initial: AmplitudePair | None = None,
    max_step: float | None = None,
) -> Trajectory:
    """Solve the complex-Hamiltonian equations for one readout curve.

    The initial state is normalized on entry, so the final squared norm is the
    probability density of ``readout``.

    Raises:
        ValueError: If the readout does not span [0, T] of ``config``.
        NumericalError: If the state becomes non-finite.
    """
    if not math.isclose(readout.t_total, config.t_total, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(
            f"readout covers [0, {readout.t_total}] but the measurement lasts {config.t_total}"
        )
    if not np.all(np.isfinite(readout.samples)):
        raise ValueError("readout contains non-finite values")
    initial = initial or AmplitudePair.ground()
    edges = readout.edges
    states, log_norm = propagate_batch(
        config, readout.samples[None, :], edges, initial.as_array(), max_step
    )
    return Trajectory(times=edges, states=states[0], log_norm_sq=log_norm[0])


def probability_density(traj: Trajectory) -> float:
    """Squared norm at the final time, i.e. P[E] of the readout that produced ``traj``."""
    return float(np.exp(traj.log_norm_sq[-1]))


def rabi_reference(config: SystemConfig, t: float) -> AmplitudePair:
    """Unmeasured evolution from level 1: C1 = cos(theta), C2 = -i sin(theta).

    ``theta`` is v times the overlap of the pulse with [0, t].
    """
    overlap = max(0.0, min(t, config.t2) - config.t1)
    theta = config.v_amplitude * overlap
    return AmplitudePair(complex(math.cos(theta)), -1j * math.sin(theta))


TRAJECTORY_COLUMNS = ("t", "re_c1", "im_c1", "re_c2", "im_c2", "p2", "norm_sq")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    amps = traj.amplitudes
    rows = (
        (float(t), c1.real, c1.imag, c2.real, c2.imag, float(p2), float(nsq))
        for t, (c1, c2), p2, nsq in zip(traj.times, amps, traj.p2, traj.norm_sq)
    )
    write_csv(path, TRAJECTORY_COLUMNS, rows)


__all__ = [
    "Trajectory",
    "integrate_rpi",
    "probability_density",
    "rabi_reference",
    "propagate_batch",
    "segment_propagator",
    "write_trajectory_csv",
]
