import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuzzymeas.core import AmplitudePair, NumericalError, SystemConfig, derive_scales
from fuzzymeas.micro import (
    ElementaryModel,
    SeriesRecord,
    concrete_model_params,
    concrete_resolution_time,
    default_series_length,
    elementary_update,
    feasibility_check,
    gaussian_series_amplitude,
    level_resolution_time,
    mean_energy,
    micro_ensemble,
    micro_trajectory,
    model_for_config,
    n_to_energy,
    positive_probability,
    series_amplitude_selective,
    series_amplitude_unordered,
    series_outcome_probability,
)
from fuzzymeas.validate import brute_force_record_mass, gaussian_limit_error

MODEL = ElementaryModel(p1=0.3, p2=0.6, tau=1.0)
PHASED = ElementaryModel(p1=0.3, p2=0.6, tau=1.0, chi=0.4, chi_prime=-0.9)
SCALES = derive_scales(SystemConfig(-0.5, 0.5, 0.0, 0.0, 0.0, 1.0, 1.0))

probs = st.floats(0.01, 0.99)
states = st.tuples(*[st.floats(-3, 3)] * 4).filter(lambda z: sum(x * x for x in z) > 1e-6).map(
    lambda z: AmplitudePair(complex(z[0], z[1]), complex(z[2], z[3])))


@pytest.mark.parametrize("bad", [dict(p1=0.0), dict(p2=1.0), dict(tau=0.0), dict(chi=math.nan)])
def test_model_validation(bad):
    kw = dict(p1=0.3, p2=0.6, tau=1.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        ElementaryModel(**kw)


@settings(max_examples=50)
@given(probs, probs, st.floats(-3, 3), st.floats(-3, 3))
def test_amplitude_moduli(p1, p2, chi, chi_p):
    m = ElementaryModel(p1, p2, 1.0, chi, chi_p)
    u, w = m.positive_amplitudes(), m.negative_amplitudes()
    assert np.allclose(np.abs(u) ** 2, [p1, p2], atol=1e-14)
    assert np.allclose(np.abs(w) ** 2, [1 - p1, 1 - p2], atol=1e-14)


def test_positive_probability_examples():
    assert positive_probability(AmplitudePair(1, 0), MODEL) == pytest.approx(0.3)
    assert positive_probability(AmplitudePair(0, 1), MODEL) == pytest.approx(0.6)
    h = 1 / math.sqrt(2)
    assert positive_probability(AmplitudePair(h, h), MODEL) == pytest.approx(MODEL.p0)
    with pytest.raises(ValueError):
        positive_probability(AmplitudePair(0, 0), MODEL)


def test_elementary_update_examples():
    out = elementary_update(AmplitudePair(1, 0), "+", MODEL)
    assert out.c1 == pytest.approx(math.sqrt(0.3)) and out.c2 == 0
    assert out.norm_sq == pytest.approx(0.3)
    with pytest.raises(ValueError):
        elementary_update(AmplitudePair(1, 0), "?", MODEL)


@settings(max_examples=60)
@given(states)
def test_observations_commute(state):
    a = elementary_update(elementary_update(state, "+", PHASED), "-", PHASED)
    b = elementary_update(elementary_update(state, "-", PHASED), "+", PHASED)
    assert a.c1 == pytest.approx(b.c1, abs=1e-12) and a.c2 == pytest.approx(b.c2, abs=1e-12)


@settings(max_examples=60)
@given(states, probs, probs, st.floats(-3, 3), st.floats(-3, 3))
def test_completeness(state, p1, p2, chi, chi_p):
    m = ElementaryModel(p1, p2, 1.0, chi, chi_p)
    plus = elementary_update(state, True, m).norm_sq
    minus = elementary_update(state, False, m).norm_sq
    assert plus + minus == pytest.approx(state.norm_sq, rel=1e-12)
    assert plus / state.norm_sq == pytest.approx(positive_probability(state, m), rel=1e-12)


def test_selective_examples():
    u, w = PHASED.positive_amplitudes(), PHASED.negative_amplitudes()
    assert np.allclose(series_amplitude_selective(PHASED, "+"), u)
    ab = series_amplitude_selective(PHASED, "+-")
    ba = series_amplitude_selective(PHASED, "-+")
    assert np.allclose(ab, u * w) and np.allclose(ab, ba)
    assert np.allclose(series_amplitude_selective(PHASED, [1, 1, 1]), u**3)
    with pytest.raises(ValueError):
        series_amplitude_selective(PHASED, [])


def test_unordered_examples():
    u, w = PHASED.positive_amplitudes(), PHASED.negative_amplitudes()
    assert np.allclose(series_amplitude_unordered(PHASED, 1, 2), math.sqrt(2) * u * w)
    half = ElementaryModel(0.5, 0.6, 1.0)
    u1, _ = series_amplitude_unordered(half, 2, 4)
    assert abs(u1) ** 2 == pytest.approx(0.375, abs=1e-14)
    with pytest.raises(ValueError):
        series_amplitude_unordered(PHASED, 5, 4)


@settings(max_examples=40)
@given(probs, probs, st.integers(1, 300), st.floats(-3, 3), st.floats(-3, 3))
def test_unordered_is_binomial_and_normalized(p1, p2, n, chi, chi_p):
    m = ElementaryModel(p1, p2, 1.0, chi, chi_p)
    u1, u2 = series_amplitude_unordered(m, np.arange(n + 1), n)
    assert np.sum(np.abs(u1) ** 2) == pytest.approx(1.0, abs=1e-12)
    assert np.sum(np.abs(u2) ** 2) == pytest.approx(1.0, abs=1e-12)
    k = n // 3
    assert abs(u1[k]) ** 2 == pytest.approx(math.comb(n, k) * p1**k * (1 - p1) ** (n - k),
                                            rel=1e-9)
    # phase is the sum of elementary phases
    phase = k * chi - (n - k) * chi_p
    assert np.angle(u1[k] * np.exp(-1j * phase)) == pytest.approx(0.0, abs=1e-9)


def test_outcome_probability_examples():
    s = AmplitudePair(0.6, 0.8j)
    p = positive_probability(s, MODEL)
    assert series_outcome_probability(s, MODEL, 1, 1) == pytest.approx(p, abs=1e-15)
    k = np.arange(6)
    pure = series_outcome_probability(AmplitudePair(1, 0), MODEL, k, 5)
    ref = [math.comb(5, j) * 0.3**j * 0.7 ** (5 - j) for j in k]
    assert np.allclose(pure, ref, atol=1e-15)


@settings(max_examples=40)
@given(states, probs, probs, st.integers(1, 200))
def test_mean_ratio_is_positive_probability(state, p1, p2, n):
    m = ElementaryModel(p1, p2, 1.0)
    k = np.arange(n + 1)
    dist = series_outcome_probability(state, m, k, n)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
    assert k @ dist / n == pytest.approx(positive_probability(state, m), abs=1e-12)


def test_gaussian_examples():
    g1, g2 = gaussian_series_amplitude(MODEL, MODEL.p1, 50)
    assert abs(g1) == pytest.approx((2 * math.pi * 50 * 0.21) ** -0.25, rel=1e-14)
    assert g1.imag == 0 and g1.real > 0 and g2.real > 0
    assert gaussian_limit_error(0.5, 400) <= 0.02


def test_gaussian_phase_matches_exact_phase():
    n, k = 40, 13
    exact = series_amplitude_unordered(PHASED, k, n)
    approx = gaussian_series_amplitude(PHASED, k / n, n)
    for e, a in zip(exact, approx):
        assert np.angle(e / a) == pytest.approx(0.0, abs=1e-9)


# sup |binomial - normal| / peak at N = 100, 200, 400, 800, computed with scipy.stats
GAUSSIAN_ORACLE = {
    0.3: [0.020641331861865793, 0.0144863847052951, 0.010173534498089762, 0.007163757418612269],
    0.5: [0.0025030858398433805, 0.0012507763609310048, 0.0006251947017527593,
          0.00031254875180752135],
}


@pytest.mark.parametrize("p", sorted(GAUSSIAN_ORACLE))
def test_gaussian_error_matches_oracle(p):
    got = [gaussian_limit_error(p, n) for n in (100, 200, 400, 800)]
    assert np.allclose(got, GAUSSIAN_ORACLE[p], rtol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 0.8))
def test_gaussian_error_decreases_with_n(p):
    errs = [gaussian_limit_error(p, n) for n in (100, 200, 400, 800)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_n_to_energy_examples():
    assert n_to_energy(MODEL.p0, MODEL, SCALES) == pytest.approx(0.0)
    assert n_to_energy(0.3, MODEL, SCALES) == pytest.approx(-0.5)
    assert n_to_energy(0.6, MODEL, SCALES) == pytest.approx(0.5)
    assert n_to_energy(0.9, MODEL, SCALES) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        n_to_energy(0.5, ElementaryModel(0.4, 0.4, 1.0), SCALES)


def test_level_resolution_time_examples():
    m = ElementaryModel(0.45, 0.55, 1.0)
    t_lr, kappa = level_resolution_time(m, SCALES)
    assert t_lr == pytest.approx(100.0)
    assert kappa == pytest.approx(0.01)
    assert level_resolution_time(ElementaryModel(0.45, 0.55, 2.0), SCALES)[0] == pytest.approx(200)
    assert level_resolution_time(ElementaryModel(0.475, 0.525, 1.0), SCALES)[0] == pytest.approx(
        400)
    with pytest.raises(ValueError):
        level_resolution_time(ElementaryModel(0.4, 0.4, 1.0), SCALES)


def test_concrete_model_examples():
    m = concrete_model_params(0.1, 0.25, 0.0, 1.0)
    assert m.p0 == pytest.approx(0.2525)
    assert m.delta_p == pytest.approx(0.1)
    assert concrete_resolution_time(0.1, 0.25, 1.0) == pytest.approx(100.0)
    assert concrete_model_params(0.1, 0.25, 2.0, 1.0).chi_prime == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        concrete_model_params(0.0, 0.25, 0.0, 1.0)
    with pytest.raises(ValueError):
        concrete_model_params(0.5, 0.9, 0.0, 1.0)


@pytest.mark.parametrize("g,a_sq", [(0.01, 1e-4), (0.01, 1e-3), (0.02, 1e-4)])
def test_concrete_resolution_time_leading_order(g, a_sq):
    # the exact ratio is (1 + g^2)(1 - p0): equal to leading order when g^2 and |a|^2 are small
    m = concrete_model_params(g, a_sq, 0.0, 1.0)
    exact = level_resolution_time(m, SCALES)[0]
    approx = concrete_resolution_time(g, a_sq, 1.0)
    assert exact / approx == pytest.approx((1 + g**2) * (1 - m.p0), rel=1e-12)
    assert abs(exact / approx - 1) <= 2 * (g**2 + a_sq)


def test_feasibility_examples():
    m = ElementaryModel(0.245, 0.255, 0.001)
    scales = derive_scales(SystemConfig(-0.5, 0.5, 1.0, 0, 1, 1, 1.0))
    rep = feasibility_check(m, scales, 10)
    assert rep.series_ratio == pytest.approx(0.002)
    assert rep.continuity_ratio == pytest.approx(2500)
    assert rep.series_ok and rep.continuity_ok
    bad = feasibility_check(ElementaryModel(0.245, 0.255, 1.0), scales, 10, g=0.1, b=1.0,
                            t_total=1000.0)
    assert bad.phase_ratio == pytest.approx(100.0)
    assert not bad.phase_ok and not bad.ok
    assert "FAIL" in bad.text()


def test_feasibility_uses_chi_prime_without_g_b():
    m = concrete_model_params(0.05, 0.2, 0.5, 0.01)
    scales = derive_scales(SystemConfig.pi_pulse(1.0))
    a = feasibility_check(m, scales, 5, t_total=1.0)
    b = feasibility_check(m, scales, 5, g=0.05, b=0.5, t_total=1.0)
    assert a.phase_ratio == pytest.approx(b.phase_ratio)


def test_micro_trajectory_rejects_uninformative_model():
    c = SystemConfig.pi_pulse(4 / 3)
    with pytest.raises(ValueError):
        micro_trajectory(c, ElementaryModel(0.5, 0.5, c.t_total / 100), 5, 0)


def test_micro_trajectory_rejects_fractional_run():
    c = SystemConfig.pi_pulse(4 / 3)
    with pytest.raises(ValueError):
        micro_trajectory(c, ElementaryModel(0.45, 0.55, 0.3), 1, 0)


def test_micro_trajectory_structure_and_determinism():
    c = SystemConfig.pi_pulse(4 / 3)
    m = model_for_config(c)
    n = default_series_length(c, m)
    r1, t1, rec1 = micro_trajectory(c, m, n, 9)
    r2, t2, rec2 = micro_trajectory(c, m, n, 9)
    assert np.array_equal(r1.samples, r2.samples) and np.array_equal(t1.states, t2.states)
    assert r1.dt == pytest.approx(n * m.tau)
    assert sum(r.n_total for r in rec1) == round(c.t_total / m.tau)
    assert all(isinstance(r, SeriesRecord) for r in rec1)
    assert t1.times[-1] == c.t_total
    assert np.all(np.diff(t1.log_norm_sq) <= 0)
    e = n_to_energy([r.n_ratio for r in rec1], m, derive_scales(c))
    assert np.allclose(e, r1.samples)


def test_micro_mean_ratio_without_drive():
    c = SystemConfig(-0.5, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0)
    m = ElementaryModel(0.3, 0.6, 0.01)
    ens = micro_ensemble(c, m, 20, 2000, seed=4)
    mean = ens.ratios.mean()
    se = math.sqrt(0.3 * 0.7 / (2000 * 100))
    assert abs(mean - 0.3) < 3 * se


@pytest.mark.parametrize("n_obs", [4, 7, 10])
def test_full_run_records_sum_to_one(n_obs):
    c = SystemConfig.pi_pulse(2.0)
    m = ElementaryModel(0.3, 0.7, c.t_total / n_obs, chi=0.2, chi_prime=0.5)
    assert brute_force_record_mass(c, m) == pytest.approx(1.0, abs=1e-12)


def test_micro_ensemble_thread_independent():
    c = SystemConfig.pi_pulse(4 / 3)
    m = model_for_config(c)
    a = micro_ensemble(c, m, 10, 3000, seed=3, threads=1)
    b = micro_ensemble(c, m, 10, 3000, seed=3, threads=2)
    assert np.array_equal(a.samples.readouts, b.samples.readouts)


def test_mean_energy_examples():
    assert mean_energy(AmplitudePair(1, 0), SCALES) == pytest.approx(-0.5)
    h = 1 / math.sqrt(2)
    assert mean_energy(AmplitudePair(h, h), SCALES) == pytest.approx(0.0)


@settings(max_examples=60)
@given(states, probs, probs)
def test_mean_energy_relation(state, p1, p2):
    if abs(p2 - p1) < 1e-3:
        p2 = p1 + 1e-3 if p1 < 0.5 else p1 - 1e-3
    m = ElementaryModel(p1, p2, 1.0)
    e = mean_energy(state, SCALES, m)
    n_bar = positive_probability(state, m)
    assert n_to_energy(n_bar, m, SCALES) == pytest.approx(e, abs=1e-10)


def test_model_for_config_matches_kappa():
    for r in (2 / 3, 4 / 3, 10 / 3):
        c = SystemConfig.pi_pulse(r)
        m = model_for_config(c)
        assert level_resolution_time(m, derive_scales(c))[1] == pytest.approx(c.kappa, rel=1e-12)
        assert c.t_total / m.tau == pytest.approx(round(c.t_total / m.tau), abs=1e-9)
        n = default_series_length(c, m)
        assert feasibility_check(m, derive_scales(c), n, t_total=c.t_total).ok
    with pytest.raises(ValueError):
        model_for_config(SystemConfig.pi_pulse())
