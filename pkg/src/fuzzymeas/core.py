"""Shared value types and derived measurement scales.

Units are hbar = 1. The default energy scale is E1 = -0.5, E2 = +0.5, so the
level midpoint E0 is zero and the level spacing is one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SystemConfig:
    """Two-level system, driving pulse and measurement strength.

    Args:
        e1: Lower level energy.
        e2: Upper level energy.
        v_amplitude: Driving matrix element v, active on [t1, t2].
        t1: Pulse start.
        t2: Pulse end.
        t_total: Measurement duration T.
        kappa: Measurement-strength constant (1 / (energy^2 * time)).
    """

    e1: float
    e2: float
    v_amplitude: float
    t1: float
    t2: float
    t_total: float
    kappa: float

    def __post_init__(self):
        values = (self.e1, self.e2, self.v_amplitude, self.t1, self.t2, self.t_total, self.kappa)
        if not all(math.isfinite(float(x)) for x in values):
            raise ValueError("SystemConfig fields must be finite")
        if not self.e2 > self.e1:
            raise ValueError(f"need e2 > e1, got e1={self.e1}, e2={self.e2}")
        if not 0.0 <= self.t1 <= self.t2 <= self.t_total:
            raise ValueError(
                f"need 0 <= t1 <= t2 <= t_total, got {self.t1}, {self.t2}, {self.t_total}"
            )
        if self.t_total <= 0.0:
            raise ValueError("t_total must be positive")
        if self.kappa < 0.0:
            raise ValueError("kappa must be non-negative")
        if self.v_amplitude < 0.0:
            raise ValueError("v_amplitude must be non-negative")

    @property
    def delta_e(self) -> float:
        return self.e2 - self.e1

    @property
    def e0(self) -> float:
        return 0.5 * (self.e1 + self.e2)

    @property
    def pulse_length(self) -> float:
        return self.t2 - self.t1

    def is_pi_pulse(self, rtol: float = 1e-9) -> bool:
        """True when the pulse length equals half a Rabi period."""
        if self.v_amplitude == 0.0:
            return False
        half_period = 0.5 * math.pi / self.v_amplitude
        return math.isclose(self.pulse_length, half_period, rel_tol=rtol)

    def with_fuzziness(self, ratio: float) -> SystemConfig:
        """Copy with kappa chosen so that 4*pi*T_lr/T_R equals ``ratio``."""
        return replace(self, kappa=kappa_for_fuzziness(ratio, self.delta_e, self.v_amplitude))

    @classmethod
    def pi_pulse(
        cls,
        fuzziness_ratio: float | None = None,
        *,
        e1: float = -0.5,
        e2: float = 0.5,
        v_amplitude: float = math.pi,
        t1: float = 0.0,
        t_after: float = 0.0,
    ) -> SystemConfig:
        """Default layout: a pi-pulse starting at ``t1``, measured until ``t2 + t_after``.

        With ``fuzziness_ratio=None`` there is no measurement (kappa = 0).
        """
        t2 = t1 + 0.5 * math.pi / v_amplitude
        kappa = 0.0
        if fuzziness_ratio is not None:
            kappa = kappa_for_fuzziness(fuzziness_ratio, e2 - e1, v_amplitude)
        return cls(e1=e1, e2=e2, v_amplitude=v_amplitude, t1=t1, t2=t2,
                   t_total=t2 + t_after, kappa=kappa)


def kappa_for_fuzziness(ratio: float, delta_e: float, v_amplitude: float) -> float:
    """kappa giving 4*pi*T_lr/T_R = ratio, with T_R = pi/v and T_lr = 1/(kappa dE^2)."""
    if ratio <= 0.0:
        raise ValueError("fuzziness ratio must be positive")
    if v_amplitude <= 0.0:
        raise ValueError("fuzziness ratio is undefined without driving (v = 0)")
    t_lr = ratio * (math.pi / v_amplitude) / (4.0 * math.pi)
    return 1.0 / (t_lr * delta_e**2)


@dataclass(frozen=True)
class DerivedScales:
    delta_e: float
    e0: float
    t_rabi: float
    t_lr: float
    fuzziness_ratio: float

    @property
    def kappa(self) -> float:
        return 0.0 if math.isinf(self.t_lr) else 1.0 / (self.t_lr * self.delta_e**2)

    @property
    def v_amplitude(self) -> float:
        return 0.0 if math.isinf(self.t_rabi) else math.pi / self.t_rabi


def derive_scales(config: SystemConfig) -> DerivedScales:
    """Level spacing, midpoint, Rabi period and level resolution time.

    Without measurement (kappa = 0) the resolution time and fuzziness ratio are
    infinite; without driving the Rabi period is infinite.
    """
    delta_e = config.e2 - config.e1
    if delta_e <= 0.0:
        raise ValueError("level spacing must be positive")
    t_rabi = math.inf if config.v_amplitude == 0.0 else math.pi / config.v_amplitude
    if config.kappa == 0.0:
        t_lr = math.inf
        ratio = math.inf
    else:
        t_lr = 1.0 / (config.kappa * delta_e**2)
        ratio = 0.0 if math.isinf(t_rabi) else 4.0 * math.pi * t_lr / t_rabi
    return DerivedScales(delta_e=delta_e, e0=0.5 * (config.e1 + config.e2),
                         t_rabi=t_rabi, t_lr=t_lr, fuzziness_ratio=ratio)


@dataclass(frozen=True)
class AmplitudePair:
    """Unnormalized level amplitudes (C1, C2) in the rotating basis.

    The squared norm is the probability density of the readout recorded so far.
    """

    c1: complex
    c2: complex

    @property
    def norm_sq(self) -> float:
        return abs(self.c1) ** 2 + abs(self.c2) ** 2

    @property
    def p1(self) -> float:
        return abs(self.c1) ** 2 / self.norm_sq

    @property
    def p2(self) -> float:
        return abs(self.c2) ** 2 / self.norm_sq

    def normalized(self) -> AmplitudePair:
        n = math.sqrt(self.norm_sq)
        if n == 0.0:
            raise ValueError("cannot normalize the zero state")
        return AmplitudePair(self.c1 / n, self.c2 / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2], dtype=complex)

    @classmethod
    def from_array(cls, a) -> AmplitudePair:
        return cls(complex(a[0]), complex(a[1]))

    @classmethod
    def ground(cls) -> AmplitudePair:
        return cls(1.0 + 0j, 0j)


class NumericalError(RuntimeError):
    """Raised when a state or weight becomes non-finite or underflows."""


def segment_count(t_total: float, dt: float) -> int:
    """Number of grid segments of width ``dt`` covering [0, t_total]; the last may be short."""
    return max(1, int(math.ceil(t_total / dt - 1e-9)))


@dataclass(frozen=True, eq=False)
class ReadoutCurve:
    """Piecewise-constant energy readout: ``samples[k]`` holds on [k*dt, (k+1)*dt).

    The last segment is truncated at ``t_total`` when dt does not divide it.
    """

    dt: float
    samples: np.ndarray
    t_total: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if not self.dt > 0.0:
            raise ValueError("readout dt must be positive")
        if samples.ndim != 1:
            raise ValueError("readout samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("readout samples must be finite")
        expected = segment_count(self.t_total, self.dt)
        if samples.size != expected:
            raise ValueError(
                f"{samples.size} samples do not cover [0, {self.t_total}] with dt={self.dt} "
                f"(need {expected})"
            )

    @property
    def edges(self) -> np.ndarray:
        return grid_edges(self.t_total, self.dt)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def value_at(self, t: float) -> float:
        k = min(int(t / self.dt), self.samples.size - 1)
        return float(self.samples[max(k, 0)])

    @classmethod
    def constant(cls, value: float, t_total: float, dt: float) -> ReadoutCurve:
        return cls(dt, np.full(segment_count(t_total, dt), float(value)), t_total)


def grid_edges(t_total: float, dt: float) -> np.ndarray:
    k = segment_count(t_total, dt)
    edges = np.arange(k + 1, dtype=float) * dt
    edges[-1] = t_total
    return edges
