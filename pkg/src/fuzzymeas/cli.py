"""Command-line runner.

Exit codes: 0 success, 1 configuration error, 2 infeasible micro model
(override with --force), 3 numerical failure, 4 validation check failed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, load_model, number
from .core import NumericalError, ReadoutCurve, SystemConfig, derive_scales
from .io import read_csv, write_csv, write_manifest
from .micro import (
    default_series_length,
    feasibility_check,
    micro_ensemble,
    micro_trajectory,
    model_for_config,
)
from .readout import (
    EnsembleSamples,
    classify,
    densities,
    sample_ensemble,
    smooth_readout,
    summarize,
    write_stats_csv,
)
from .rpi import integrate_rpi, probability_density, write_trajectory_csv
from .validate import cross_sampler_agreement, run_validation_suite, write_validation_csv

EXIT_CONFIG = 1
EXIT_FEASIBILITY = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4

FIGURE1_RATIOS = (10.0 / 3.0, 2.0 / 3.0)
FIGURE2_RATIO = 4.0 / 3.0
FIGURE3_RATIOS = (2.0 / 3.0, 1.0, 4.0 / 3.0, 2.0, 8.0 / 3.0, 10.0 / 3.0)
STOCHASTIC = {"rpi-run", "ensemble", "micro-run", "compare", "figure1", "figure2", "figure3"}


class FeasibilityError(RuntimeError):
    pass


class ValidationFailed(RuntimeError):
    pass


def _package_version() -> str:
    try:
        return version("fuzzymeas")
    except PackageNotFoundError:
        return "unknown"


@dataclass
class ExperimentSpec:
    mode: str
    config: ExperimentConfig
    seed: int | None
    n: int
    out: Path
    threads: int = 1
    sampler: str = "rpi"
    force: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        given_readout = self.mode == "rpi-run" and self.extra.get("readout")
        if self.mode in STOCHASTIC and self.seed is None and not given_readout:
            raise ConfigError(f"'{self.mode}' is stochastic: --seed is required")
        if self.n < 1:
            raise ConfigError("--n must be at least 1")
        if self.threads < 1:
            raise ConfigError("--threads must be at least 1")


def _sample(spec: ExperimentSpec, system: SystemConfig, seed: int) -> EnsembleSamples:
    if spec.sampler == "micro":
        return _micro_samples(spec, system, seed)
    prior = spec.config.prior
    return sample_ensemble(system, prior, spec.n, seed, spec.threads)


def _micro_samples(spec: ExperimentSpec, system: SystemConfig, seed: int) -> EnsembleSamples:
    model = model_for_config(system, spec.config.micro_p0, spec.config.micro_dp)
    n_series = default_series_length(system, model)
    report = feasibility_check(model, derive_scales(system), n_series, t_total=system.t_total)
    _check_feasible(report, spec.force)
    return micro_ensemble(system, model, n_series, spec.n, seed, spec.threads).samples


def _check_feasible(report, force: bool) -> None:
    if report.ok:
        return
    if not force:
        raise FeasibilityError("micro model outside its validity range:\n" + report.text())
    print("warning: micro model outside its validity range (--force)", file=sys.stderr)
    print(report.text(), file=sys.stderr, end="")


def _point_seed(seed: int, index: int) -> int:
    """Seed for sweep point ``index``; independent of which other points run."""
    return int(np.random.SeedSequence([seed, 1000 + index]).generate_state(1)[0])


def _ensembles(spec: ExperimentSpec):
    out = []
    for i, system in enumerate(spec.config.systems()):
        samples = _sample(spec, system, _point_seed(spec.seed, i))
        out.append((system, samples, summarize(samples, spec.config.settings(system))))
    return out


def _write_densities(out: Path, system, samples, settings, suffix="", mask=None) -> list[str]:
    de, dp = densities(samples, settings, mask)
    names = [f"density_e{suffix}.csv", f"density_p2{suffix}.csv"]
    de.write_csv(out / names[0])
    dp.write_csv(out / names[1])
    return names


def run_rpi(spec: ExperimentSpec) -> list[str]:
    system = spec.config.systems()[0]
    readout_path = spec.extra.get("readout")
    if readout_path:
        rows = read_csv(readout_path)
        try:
            values = np.array([float(r["E"]) for r in rows])
            dt = float(spec.extra.get("dt") or spec.config.prior.grid_dt(system))
            readout = ReadoutCurve(dt, values, system.t_total)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{readout_path}: bad readout ({exc})") from exc
    else:
        samples = sample_ensemble(system, spec.config.prior, 1, spec.seed)
        readout = ReadoutCurve(spec.config.prior.grid_dt(system), samples.readouts[0],
                               system.t_total)
    traj = integrate_rpi(system, readout)
    settings = spec.config.settings(system)
    label = classify(traj, smooth_readout(readout, settings.verdict_window, "trailing"),
                     derive_scales(system))
    write_trajectory_csv(spec.out / "trajectory.csv", traj)
    write_csv(spec.out / "readout.csv", ("t", "E"),
              zip(readout.edges[:-1].tolist(), readout.samples.tolist()))
    write_csv(spec.out / "summary.csv", ("quantity", "value"), [
        ("probability_density", probability_density(traj)),
        ("p2_final", float(traj.p2[-1])),
        ("state_up", int(label.state_up)),
        ("readout_up", int(label.readout_up)),
    ])
    return ["trajectory.csv", "readout.csv", "summary.csv"]


def run_ensemble_mode(spec: ExperimentSpec) -> list[str]:
    results = _ensembles(spec)
    write_stats_csv(spec.out / "stats.csv", [s for _, _, s in results])
    files = ["stats.csv"]
    for i, (system, samples, _) in enumerate(results):
        suffix = "" if len(results) == 1 else f"_{i}"
        files += _write_densities(spec.out, system, samples, spec.config.settings(system),
                                  suffix)
    return files


def run_micro(spec: ExperimentSpec) -> list[str]:
    system = spec.config.systems()[0]
    model_path = spec.extra.get("model")
    if model_path:
        model, g, b = load_model(model_path, system)
    else:
        model = model_for_config(system, spec.config.micro_p0, spec.config.micro_dp)
        g = b = None
    n_series = spec.extra.get("series_n") or default_series_length(system, model)
    scales = derive_scales(system)
    report = feasibility_check(model, scales, n_series, g, b, system.t_total)
    (spec.out / "feasibility.txt").write_text(report.text())
    _check_feasible(report, spec.force)
    try:
        readout, traj, records = micro_trajectory(system, model, n_series, spec.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(spec.out / "readout.csv", ("t", "n", "E"),
              ((float(t), r.n_ratio, r.energy) for t, r in zip(readout.edges[:-1], records)))
    write_trajectory_csv(spec.out / "trajectory.csv", traj)
    spec.extra["resolved_model"] = asdict(model)
    spec.extra["series_n"] = n_series
    return ["readout.csv", "trajectory.csv", "feasibility.txt"]


def run_compare(spec: ExperimentSpec) -> list[str]:
    rows = []
    for i, system in enumerate(spec.config.systems()):
        model = model_for_config(system, spec.config.micro_p0, spec.config.micro_dp)
        rep = cross_sampler_agreement(system, model, spec.config.prior, spec.n,
                                      _point_seed(spec.seed, i), threads=spec.threads)
        rows.append((derive_scales(system).fuzziness_ratio, rep.rpi_transition,
                     rep.micro_transition, rep.se_transition, rep.rpi_noise, rep.micro_noise,
                     rep.se_noise, rep.diff_transition / rep.se_transition))
    write_csv(spec.out / "compare.csv",
              ("ratio", "rpi_p_transition_state", "micro_p_transition_state", "se_transition",
               "rpi_noise", "micro_noise", "se_noise", "transition_sigmas"), rows)
    return ["compare.csv"]


def run_validate(spec: ExperimentSpec) -> list[str]:
    rows = run_validation_suite(seed=spec.seed, n_samples=min(spec.n, 4000),
                                threads=spec.threads)
    write_validation_csv(spec.out / "validation.csv", rows)
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:<{width}}  {r.value:<12.4g} {r.relation} {r.threshold:<8.3g} "
              f"{'pass' if r.passed else 'FAIL'}")
    spec.extra["failed"] = [r.name for r in rows if not r.passed]
    return ["validation.csv"]


def run_figure1(spec: ExperimentSpec) -> list[str]:
    spec.config = spec.config.with_ratios(FIGURE1_RATIOS)
    files = []
    stats = []
    for system, samples, st in _ensembles(spec):
        tag = f"_r{derive_scales(system).fuzziness_ratio:.4f}"
        files += _write_densities(spec.out, system, samples, spec.config.settings(system), tag)
        stats.append(st)
    write_stats_csv(spec.out / "stats.csv", stats)
    return ["stats.csv"] + files


def run_figure2(spec: ExperimentSpec) -> list[str]:
    spec.config = spec.config.with_ratios([FIGURE2_RATIO])
    (system, samples, st), = _ensembles(spec)
    settings = spec.config.settings(system)
    files = []
    for name, mask in (("all", None), ("transition", st.state_up),
                       ("no_transition", ~st.state_up)):
        if mask is not None and not mask.any():
            continue
        files += _write_densities(spec.out, system, samples, settings, f"_{name}", mask)
    write_stats_csv(spec.out / "stats.csv", [st])
    return ["stats.csv"] + files


def run_figure3(spec: ExperimentSpec) -> list[str]:
    ratios = spec.extra.get("ratios") or FIGURE3_RATIOS
    spec.config = spec.config.with_ratios(ratios)
    results = _ensembles(spec)
    write_stats_csv(spec.out / "stats.csv", [s for _, _, s in results])
    write_csv(spec.out / "errors.csv",
              ("ratio", "se_transition_state", "se_noise", "false_positive", "false_negative",
               "effective_sample_size"),
              ((s.fuzziness_ratio, s.se_transition_state, s.se_noise, s.false_positive,
                s.false_negative, s.effective_sample_size) for _, _, s in results))
    return ["stats.csv", "errors.csv"]


RUNNERS = {
    "rpi-run": run_rpi,
    "ensemble": run_ensemble_mode,
    "micro-run": run_micro,
    "compare": run_compare,
    "validate": run_validate,
    "figure1": run_figure1,
    "figure2": run_figure2,
    "figure3": run_figure3,
}


def run(spec: ExperimentSpec) -> int:
    """Execute one experiment, write its files and manifest, and return the exit status."""
    spec.out.mkdir(parents=True, exist_ok=True)
    files = RUNNERS[spec.mode](spec)
    extra = {k: (str(v) if isinstance(v, Path) else v) for k, v in spec.extra.items()}
    write_manifest(spec.out, {
        "command": spec.mode,
        "seed": spec.seed,
        "n": spec.n,
        "sampler": spec.sampler,
        "config": spec.config.to_dict(),
        "options": extra,
        "files": sorted(files),
        "version": _package_version(),
    })
    if spec.extra.get("failed"):
        raise ValidationFailed("failed checks: " + ", ".join(spec.extra["failed"]))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="RNG seed (required for stochastic commands)")
    common.add_argument("--out", help="output directory (default: out/<command>)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--n", type=int, default=10_000, help="trajectories per ensemble")
    sampled = argparse.ArgumentParser(add_help=False)
    sampled.add_argument("--sampler", choices=("rpi", "micro"), default="rpi")
    sampled.add_argument("--force", action="store_true",
                         help="run micro sampling even if validity ratios fail")

    parser = _Parser(prog="fuzzymeas", description="Continuous fuzzy energy measurement "
                     "of a driven two-level system.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("rpi-run", parents=[common], help="integrate one readout")
    p.add_argument("--readout", help="CSV with column E; drawn from the prior if omitted")
    p.add_argument("--dt", type=float, help="grid spacing of --readout")
    sub.add_parser("ensemble", parents=[common, sampled], help="weighted ensemble statistics")
    p = sub.add_parser("micro-run", parents=[common], help="one microscopic trajectory")
    p.add_argument("--model", help="YAML observation model")
    p.add_argument("--series-n", type=int, help="observations per readout point")
    p.add_argument("--force", action="store_true", help="run even if validity ratios fail")
    sub.add_parser("compare", parents=[common], help="RPI vs microscopic sampler")
    sub.add_parser("validate", parents=[common], help="oracle suite, writes validation.csv")
    sub.add_parser("figure1", parents=[common, sampled], help="soft and hard density plots")
    sub.add_parser("figure2", parents=[common, sampled], help="densities split by outcome")
    p = sub.add_parser("figure3", parents=[common, sampled], help="fuzziness sweep")
    p.add_argument("--ratios", help="comma-separated fuzziness ratios, e.g. 2/3,4/3")
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    config = load_config(args.config)
    extra = {}
    for key in ("readout", "dt", "model", "series_n"):
        if getattr(args, key, None) is not None:
            extra[key] = getattr(args, key)
    if getattr(args, "series_n", None) is not None and args.series_n < 1:
        raise ConfigError("--series-n must be at least 1")
    if getattr(args, "ratios", None):
        extra["ratios"] = [number(r, "--ratios") for r in args.ratios.split(",")]
    seed = args.seed
    if args.command == "validate" and seed is None:
        seed = 0
    return ExperimentSpec(
        mode=args.command,
        config=config,
        seed=seed,
        n=args.n,
        out=Path(args.out or Path("out") / args.command),
        threads=args.threads,
        sampler=getattr(args, "sampler", "rpi"),
        force=getattr(args, "force", False),
        extra=extra,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(_spec_from_args(args))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FeasibilityError as exc:
        print(f"feasibility failure: {exc}", file=sys.stderr)
        return EXIT_FEASIBILITY
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationFailed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
