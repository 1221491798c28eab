"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
from scipy import stats

from fuzzymeas.cli import main
from fuzzymeas.core import AmplitudePair, ReadoutCurve, SystemConfig, derive_scales
from fuzzymeas.micro import ElementaryModel, default_series_length, micro_ensemble, model_for_config
from fuzzymeas.readout import ReadoutSettings, run_ensemble, summarize
from fuzzymeas.rpi import integrate_rpi
from fuzzymeas.validate import binomial_oracle_error, gaussian_limit_error, operator_sweep

N_SAMPLES = 10_000


def _micro_stats(config, seed):
    model = model_for_config(config)
    ens = micro_ensemble(config, model, default_series_length(config, model), N_SAMPLES, seed)
    return summarize(ens.samples, ReadoutSettings.for_config(config))


def test_rabi_exactness(criterion):
    config = SystemConfig.pi_pulse(None)
    readout = ReadoutCurve(config.t_total / 25, np.zeros(25), config.t_total)
    integrate_rpi(config, readout)
    best = math.inf
    for _ in range(20):
        start = time.perf_counter()
        traj = integrate_rpi(config, readout)
        best = min(best, time.perf_counter() - start)
    err = max(abs(traj.p2[-1] - 1.0), abs(traj.norm_sq[-1] - 1.0))
    assert criterion(1, err <= 1e-8 and best < 1e-3, f"error {err:.2e}, runtime {best * 1e3:.3f} ms")


def test_decay_closed_form(criterion):
    config = SystemConfig(-0.5, 0.5, 0.0, 0.0, 0.0, 2.0, 0.7)
    e0 = 0.0
    readout = ReadoutCurve(0.1, np.full(20, e0), config.t_total)
    errs = []
    for state in (AmplitudePair.ground(), AmplitudePair(0.6, 0.8j)):
        traj = integrate_rpi(config, readout, state)
        expected = math.exp(-config.t_total / (2 * derive_scales(config).t_lr))
        errs.append(abs(traj.norm_sq[-1] - expected))
    assert criterion(2, max(errs) <= 1e-8, f"max error {max(errs):.2e}")


def test_soft_limit_transition(criterion):
    config = SystemConfig.pi_pulse(10 / 3)
    start = time.perf_counter()
    micro = _micro_stats(config, 101)
    elapsed = time.perf_counter() - start
    rpi = run_ensemble(config, n=N_SAMPLES, seed=102)
    se = math.hypot(micro.se_transition_state, rpi.se_transition_state)
    diff = abs(micro.p_transition_state - rpi.p_transition_state)
    ok = abs(micro.p_transition_state - 0.88) <= 0.05 and diff <= 3 * se and elapsed <= 60
    assert criterion(3, ok, f"micro {micro.p_transition_state:.4f}, rpi {rpi.p_transition_state:.4f}, "
                            f"|diff| {diff:.4f} <= 3se {3 * se:.4f}, micro runtime {elapsed:.1f} s")


def test_intermediate_regime(criterion):
    config = SystemConfig.pi_pulse(4 / 3)
    parts = []
    ok = True
    for name, st in (("rpi", run_ensemble(config, n=N_SAMPLES, seed=201)),
                     ("micro", _micro_stats(config, 202))):
        gap = abs(st.p_valid_pos - st.p_valid_neg)
        ok &= abs(st.noise - 0.20) <= 0.07 and gap <= 0.15
        parts.append(f"{name}: noise {st.noise:.3f}, valid gap {gap:.3f}")
    assert criterion(4, ok, "; ".join(parts))


def test_zeno_trend(criterion):
    ratios = (2 / 3, 4 / 3, 2.0, 10 / 3)
    results = [run_ensemble(SystemConfig.pi_pulse(r), n=N_SAMPLES, seed=300 + i)
               for i, r in enumerate(ratios)]
    p = [s.p_transition_state for s in results]
    se = [s.se_transition_state for s in results]
    ok = all(b - a >= -3 * math.hypot(sa, sb) for a, b, sa, sb in zip(p, p[1:], se, se[1:]))
    assert criterion(5, ok, "p_transition " + ", ".join(f"{x:.3f}" for x in p))


def test_binomial_oracle(criterion):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    worst = 0.0
    for n in range(1, 13):
        for _ in range(3):
            z = rng.normal(size=4)
            state = AmplitudePair(complex(z[0], z[1]), complex(z[2], z[3]))
            p1, p2 = rng.uniform(0.02, 0.98, 2)
            model = ElementaryModel(p1, p2, 1.0, *rng.normal(size=2))
            worst = max(worst, *binomial_oracle_error(state, model, n).values())
    elapsed = time.perf_counter() - start
    assert criterion(6, worst <= 1e-12 and elapsed < 1.0,
                     f"max deviation {worst:.2e}, runtime {elapsed:.3f} s")


def _gaussian_oracle(p, n):
    k = np.arange(n + 1)
    exact = stats.binom.pmf(k, n, p)
    approx = stats.norm.pdf(k, n * p, math.sqrt(n * p * (1 - p)))
    return float(np.max(np.abs(exact - approx)) / exact.max())


def test_gaussian_limit(criterion):
    ok = True
    parts = []
    for p in (0.3, 0.5, 0.7):
        errs = [gaussian_limit_error(p, n) for n in (100, 200, 400, 800)]
        oracle = [_gaussian_oracle(p, n) for n in (100, 200, 400, 800)]
        ok &= np.allclose(errs, oracle, rtol=1e-8, atol=1e-14)
        ok &= errs[2] <= 0.02 and all(b < a for a, b in zip(errs, errs[1:]))
        parts.append(f"p={p}: N=400 error {errs[2]:.4f}")
    assert criterion(7, ok, "; ".join(parts))


def test_operator_equivalence(criterion):
    sweep = operator_sweep()
    errs = [r.operator_error for _, r in sweep]
    bounds = [r.predicted_bound for _, r in sweep]
    floors = {r.gaussian_floor for _, r in sweep}
    p0, dp = 0.5, 0.04
    monotone = all(b < a for a, b in zip(errs, errs[1:])) and all(
        b < a for a, b in zip(bounds, bounds[1:]))
    small = [e for e, b in zip(errs, bounds) if b <= 0.01]
    ok = monotone and len(floors) == 1 and small and max(small) <= 1e-2 and p0 / dp**2 >= 100
    detail = ", ".join(f"ratio {b:.4f}: {e:.4f}" for e, b in zip(errs, bounds))
    assert criterion(8, ok, detail)


COMMANDS = [
    ("ensemble", "--n", "400"),
    ("ensemble", "--n", "400", "--sampler", "micro"),
    ("figure1", "--n", "300"),
    ("figure2", "--n", "300"),
    ("figure3", "--n", "200", "--ratios", "2/3,10/3"),
    ("compare", "--n", "300"),
    ("micro-run",),
    ("rpi-run",),
    ("validate", "--n", "1000"),
]


def test_determinism(tmp_path, criterion):
    mismatched = []
    for i, cmd in enumerate(COMMANDS):
        outs = []
        for rep, threads in enumerate(("1", "2")):
            out = tmp_path / f"{i}_{rep}"
            code = main([*cmd, "--seed", "11", "--threads", threads, "--out", str(out)])
            assert code == 0, cmd
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        if not outs[0] or outs[0] != outs[1]:
            mismatched.append(cmd[0])
    assert criterion(9, not mismatched,
                     f"{len(COMMANDS)} commands" + (f", mismatched {mismatched}" if mismatched else ""))
