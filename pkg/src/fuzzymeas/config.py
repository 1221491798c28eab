"""YAML experiment configuration.

Example::

    system:
      e1: -0.5
      e2: 0.5
      v: 3.141592653589793
      t1: 0.0
      t2: 0.5
      t_total: 0.5
    measurement:
      fuzziness_ratio: 4/3      # or a list, or `kappa: ...` instead
    readout:
      dt: 0.02
      smoothing_window: 0.5
      verdict_window: 0.35
    prior:
      kind: guided              # or uniform (with e_lo / e_hi)
    micro:
      p0: 0.5
      dp: 0.1

Every section is optional; omitted values fall back to a pi-pulse measured
only while the drive is on.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path

import yaml

from .core import SystemConfig
from .micro import ElementaryModel, concrete_model_params
from .readout import PriorSpec, ReadoutSettings

DEFAULT_RATIO = 4.0 / 3.0


class ConfigError(ValueError):
    """Invalid or inconsistent configuration input."""


def number(value, name: str) -> float:
    """Parse a YAML scalar as a float; strings like "4/3" are accepted."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    try:
        if isinstance(value, str):
            return float(Fraction(value.strip()))
        return float(value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{name}: expected a number, got {value!r}") from exc


def _section(data: dict, name: str, allowed: set[str]) -> dict:
    sec = data.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: one system per fuzziness ratio plus readout options."""

    system: SystemConfig
    ratios: tuple[float, ...] | None
    prior: PriorSpec
    smoothing_window: float | None = None
    verdict_window: float | None = None
    micro_p0: float = 0.5
    micro_dp: float = 0.1

    def systems(self) -> list[SystemConfig]:
        if self.ratios is None:
            return [self.system]
        return [self.system.with_fuzziness(r) for r in self.ratios]

    def with_ratios(self, ratios) -> ExperimentConfig:
        return replace(self, ratios=tuple(float(r) for r in ratios))

    def settings(self, system: SystemConfig) -> ReadoutSettings:
        return ReadoutSettings.for_config(system, self.smoothing_window, self.verdict_window)

    def to_dict(self) -> dict:
        """Fully resolved settings, defaults filled in, for run manifests."""
        settings = self.settings(self.system)
        lo, hi = self.prior.window(self.system)
        return {
            "system": asdict(self.system),
            "fuzziness_ratios": None if self.ratios is None else list(self.ratios),
            "prior": {"kind": self.prior.kind, "e_lo": lo, "e_hi": hi},
            "readout": {
                "dt": self.prior.grid_dt(self.system),
                "smoothing_window": settings.smoothing_window,
                "verdict_window": settings.verdict_window,
                "e_range": list(settings.e_range),
            },
            "micro": {"p0": self.micro_p0, "dp": self.micro_dp},
        }


def parse_config(data: dict | None) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - {"system", "measurement", "readout", "prior", "micro"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    sys_sec = _section(data, "system", {"e1", "e2", "v", "t1", "t2", "t_total"})
    meas = _section(data, "measurement", {"fuzziness_ratio", "kappa"})
    ro = _section(data, "readout", {"dt", "smoothing_window", "verdict_window"})
    pr = _section(data, "prior", {"kind", "e_lo", "e_hi"})
    mi = _section(data, "micro", {"p0", "dp"})

    v = number(sys_sec.get("v", math.pi), "system.v")
    t1 = number(sys_sec.get("t1", 0.0), "system.t1")
    t2_default = t1 + 0.5 * math.pi / v if v > 0.0 else 1.0
    t2 = number(sys_sec.get("t2", t2_default), "system.t2")
    t_total = number(sys_sec.get("t_total", t2), "system.t_total")

    if "fuzziness_ratio" in meas and "kappa" in meas:
        raise ConfigError("give either measurement.fuzziness_ratio or measurement.kappa")
    kappa = 0.0
    ratios = None
    if "kappa" in meas:
        kappa = number(meas["kappa"], "measurement.kappa")
    else:
        raw = meas.get("fuzziness_ratio", DEFAULT_RATIO)
        raw = raw if isinstance(raw, list) else [raw]
        if not raw:
            raise ConfigError("measurement.fuzziness_ratio list is empty")
        ratios = tuple(number(r, "measurement.fuzziness_ratio") for r in raw)
        if any(r <= 0.0 for r in ratios):
            raise ConfigError("fuzziness ratios must be positive")
        if v <= 0.0:
            raise ConfigError("a fuzziness ratio needs a driving amplitude v > 0")

    def opt(sec, key, label):
        return None if sec.get(key) is None else number(sec[key], label)

    try:
        system = SystemConfig(
            e1=number(sys_sec.get("e1", -0.5), "system.e1"),
            e2=number(sys_sec.get("e2", 0.5), "system.e2"),
            v_amplitude=v, t1=t1, t2=t2, t_total=t_total, kappa=kappa,
        )
        if ratios is not None:
            system = system.with_fuzziness(ratios[0])
        prior = PriorSpec(kind=str(pr.get("kind", "guided")), e_lo=opt(pr, "e_lo", "prior.e_lo"),
                          e_hi=opt(pr, "e_hi", "prior.e_hi"), dt=opt(ro, "dt", "readout.dt"))
        prior.window(system)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if prior.dt is not None and prior.dt <= 0.0:
        raise ConfigError("readout.dt must be positive")
    cfg = ExperimentConfig(
        system=system,
        ratios=ratios,
        prior=prior,
        smoothing_window=opt(ro, "smoothing_window", "readout.smoothing_window"),
        verdict_window=opt(ro, "verdict_window", "readout.verdict_window"),
        micro_p0=number(mi.get("p0", 0.5), "micro.p0"),
        micro_dp=number(mi.get("dp", 0.1), "micro.dp"),
    )
    for w in (cfg.smoothing_window, cfg.verdict_window):
        if w is not None and w <= 0.0:
            raise ConfigError("smoothing windows must be positive")
    return cfg


def _load_yaml(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc


def load_config(path=None) -> ExperimentConfig:
    return parse_config(None if path is None else _load_yaml(path))


def parse_model(data: dict, system: SystemConfig) -> tuple[ElementaryModel, float | None, float | None]:
    """Build an observation model from a mapping; returns (model, g, b).

    ``tau`` may be omitted when the system has kappa > 0: it is then chosen so
    that the model reproduces kappa, rounded to a whole number of periods in T.
    """
    if not isinstance(data, dict):
        raise ConfigError("model file must be a mapping")
    allowed = {"p1", "p2", "g", "a_sq", "b", "tau", "chi", "chi_prime"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    direct = {"p1", "p2"} <= set(data)
    concrete = {"g", "a_sq", "b"} <= set(data)
    if direct == concrete:
        raise ConfigError("model needs exactly one of (p1, p2) or (g, a_sq, b)")
    g = b = None
    try:
        if direct:
            p1, p2 = number(data["p1"], "p1"), number(data["p2"], "p2")
            chi = number(data.get("chi", 0.0), "chi")
            chi_p = number(data.get("chi_prime", 0.0), "chi_prime")
            model = ElementaryModel(p1=p1, p2=p2, tau=1.0, chi=chi, chi_prime=chi_p)
        else:
            g, b = number(data["g"], "g"), number(data["b"], "b")
            model = concrete_model_params(g, number(data["a_sq"], "a_sq"), b, 1.0)
        model.require_resolving()
        if "tau" in data:
            tau = number(data["tau"], "tau")
        else:
            if system.kappa <= 0.0:
                raise ConfigError("model.tau is required when the measurement has kappa = 0")
            t_lr = 1.0 / (system.kappa * system.delta_e**2)
            p0 = model.p0
            tau = t_lr * model.delta_p**2 / (4.0 * p0 * (1.0 - p0))
            tau = system.t_total / max(1, round(system.t_total / tau))
        model = replace(model, tau=tau)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return model, g, b


def load_model(path, system: SystemConfig):
    return parse_model(_load_yaml(path) or {}, system)
