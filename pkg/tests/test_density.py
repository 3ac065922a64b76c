import math

import numpy as np
import pytest
from scipy import integrate, stats

from socchain.charfn import cf_aux, phi_at_shift, phi_shifted
from socchain.density import (QuadratureControl, TiltPlan, aux_density, conditional_density,
                              conditional_density_shifted, default_tilt, domination_bound,
                              shifted_integrand, tail_parts, tail_probability,
                              truncation_point)
from socchain.errors import ConvergenceError, DomainError, UnknownRegime
from socchain.limit_laws import INTERMEDIATE_RATE, sigma_r
from socchain.samplers import sample_aux
from socchain.spectrum import ModelParams, compute_spectrum


def spec(n, r):
    return compute_spectrum(ModelParams(n, r))


def test_plan_validation():
    with pytest.raises(DomainError):
        TiltPlan(-0.1)
    with pytest.raises(DomainError):
        TiltPlan(0.1, 0.5)
    assert TiltPlan(0.6, 3.0).shift == pytest.approx(0.2)
    with pytest.raises(DomainError):
        QuadratureControl(abs_tol=0)


def test_default_tilt():
    t = default_tilt(ModelParams(100, 1), "finite")
    assert t.u_star == pytest.approx(1 / (2 * (math.sqrt(2) + 1)), abs=1e-9)
    assert t.u_star == pytest.approx(0.207107, abs=1e-6)
    assert t.w_n == 1
    assert default_tilt(ModelParams(100, 40), "long") == TiltPlan(0.0, 1.0)
    assert default_tilt(ModelParams(100, 40), "threshold") == TiltPlan(0.0, 1.0)
    t = default_tilt(ModelParams(65536, 776), "intermediate")
    assert t.u_star == pytest.approx(0.572357, abs=1e-6)
    assert t.w_n == pytest.approx(776 ** (2 / 3))
    with pytest.raises(UnknownRegime):
        default_tilt(ModelParams(100, 1), "short")


def test_aux_density_normalized():
    s = spec(16, 1)
    # min beta = 2 sin^2(pi/16): the left tail decays like exp(0.038 x)
    x = np.linspace(-900, 16, 4581)
    f = aux_density(s, x)
    assert np.all(f >= 0)
    assert np.trapezoid(f, x) == pytest.approx(1.0, abs=1e-4)
    # nothing beyond n: A_n >= 0
    assert aux_density(s, 16.5) < 1e-9


def test_aux_density_requires_n4():
    with pytest.raises(DomainError):
        aux_density(spec(3, 1), 0.0)


def test_aux_density_matches_histogram():
    n = 200
    s = spec(n, 1)
    draws = 10 ** 7
    rng = np.random.default_rng(2024)
    y = np.concatenate([n - sample_aux(s, rng, 10 ** 6)[0] for _ in range(draws // 10 ** 6)])
    lo, hi = np.quantile(y, [1e-3, 1 - 1e-3])
    edges = np.linspace(lo, hi, 121)
    h = edges[1] - edges[0]
    counts, _ = np.histogram(y, bins=edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    # Simpson on each bin
    fl, fm, fr = aux_density(s, edges[:-1]), aux_density(s, mids), aux_density(s, edges[1:])
    p = (fl + 4 * fm + fr) / 6 * h
    keep = p * draws >= 50
    se = np.sqrt(p * (1 - p) / draws)
    z = np.abs(counts / draws - p)[keep] / se[keep]
    assert z.max() <= 4


def test_aux_density_gaussian_limit():
    n = 2 ** 14
    s = spec(n, int(n ** 0.85))
    t = np.array([0.0, 1.0])
    got = aux_density(s, math.sqrt(n) * t) * math.sqrt(n)
    assert np.max(np.abs(got - stats.norm.pdf(t, scale=math.sqrt(2)))) <= 0.02


def test_tail_probability_rejection_rate():
    # moderately rare event so the Monte Carlo oracle has power
    n = 32
    s = spec(n, 1)
    _, acc = sample_aux(s, np.random.default_rng(7), 10 ** 6)
    p = tail_probability(s)
    assert abs(acc.mean() - p) <= 3 * math.sqrt(p * (1 - p) / acc.size)
    assert 0 < p < 0.01


def test_tail_probability_half():
    assert tail_probability(spec(400, 150)) == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("n,r", [(16, 1), (64, 1), (64, 5), (40, 19)])
def test_contour_invariance(n, r):
    s = spec(n, r)
    vals = [tail_probability(s, TiltPlan(u)) for u in (0.0, 0.05, 0.2, 0.5)]
    assert max(vals) - min(vals) <= 1e-6 * max(1.0, max(vals))
    assert all(0 <= v <= 1 for v in vals)


def test_overshifted_contour_is_reported():
    with pytest.raises(ConvergenceError):
        tail_probability(spec(64, 1), TiltPlan(2.0))


def test_tail_parts_log_scale():
    s = spec(4096, 1)
    plan = default_tilt(ModelParams(4096, 1), "finite")
    log_pref, scaled = tail_parts(s, plan)
    assert log_pref == pytest.approx(phi_at_shift(s, plan.shift))
    assert log_pref < -500
    assert 0 < scaled < 1
    assert tail_probability(s, plan) == 0.0


def test_domination_bound_majorizes():
    for n, r in [(4, 1), (16, 3), (64, 1), (128, 63)]:
        s = spec(n, r)
        v = np.concatenate([np.linspace(0, 5, 501), np.geomspace(5, 1e4, 200)])
        for ustar in (0.0, 0.2, 1.0):
            for c in (0.0, ustar / 2, ustar):
                mod = np.abs(np.exp(phi_shifted(s, v, c)))
                assert np.all(mod <= domination_bound(v, ustar) * (1 + 1e-12))


def test_truncation_point_bound():
    s = spec(64, 2)
    U = truncation_point(s.betas, 1e-8)
    v = np.geomspace(U, 1e3 * U, 3000)
    mod = np.abs(cf_aux(s, v))
    # the tail integral beyond U is below the target
    assert np.trapezoid(mod, v) < 1e-8
    assert np.abs(cf_aux(s, U / 3)) > 1e-12


def test_shifted_integrand_at_zero():
    s = spec(64, 3)
    plan = TiltPlan(0.4, 2.0)
    for x in (0.1, 1.0, 7.0):
        val = shifted_integrand(s, plan, x, 0.0)[0]
        assert val.imag == 0
        assert val.real == pytest.approx(math.exp(-0.4 * x), rel=1e-15)


def test_conditional_density_matches_aux_density():
    s = spec(24, 2)
    plan = TiltPlan(0.3)
    x = np.array([0.5, 2.0, 9.0])
    log_pref, _ = tail_parts(s, plan)
    sub = conditional_density_shifted(s, plan, x) * math.exp(log_pref)
    np.testing.assert_allclose(sub, aux_density(s, x), atol=1e-9)
    with pytest.raises(DomainError):
        conditional_density_shifted(s, plan, 24.0)
    with pytest.raises(DomainError):
        conditional_density_shifted(s, plan, 0.0)


def test_conditional_density_normalized():
    s = spec(64, 1)
    plan = default_tilt(ModelParams(64, 1), "finite")
    x = np.linspace(1e-6, 64 - 1e-6, 6401)
    f = conditional_density(s, plan, x)
    assert np.trapezoid(f, x) == pytest.approx(1.0, abs=1e-3)


def test_conditional_density_finite_limit():
    p = ModelParams(4096, 1)
    s = compute_spectrum(p)
    plan = default_tilt(p, "finite")
    x = np.linspace(0.01, 10, 100)
    rate = 1 / (2 * sigma_r(1) ** 2)
    err = np.abs(conditional_density(s, plan, x) - rate * np.exp(-rate * x))
    assert err.max() <= 0.03


def test_conditional_density_intermediate_limit():
    n = 2 ** 16
    p = ModelParams(n, int(n ** 0.6))
    s = compute_spectrum(p)
    plan = default_tilt(p, "intermediate")
    x = np.linspace(0.01, 10, 60)
    err = np.abs(conditional_density(s, plan, x)
                 - INTERMEDIATE_RATE * np.exp(-INTERMEDIATE_RATE * x))
    assert err.max() <= 0.05


def test_quadrature_budget_enforced():
    s = spec(64, 1)
    with pytest.raises(ConvergenceError):
        aux_density(s, np.linspace(-100, 60, 50), QuadratureControl(abs_tol=1e-14, max_points=21))
