import math

import numpy as np
import pytest
from scipy import integrate

from socchain.density import TiltPlan, conditional_density, default_tilt
from socchain.errors import DomainError, EmptyInput
from socchain.harness import ks_two_sample, weighted_ecdf
from socchain.samplers import (SpinConfig, WeightedSamples, delta_hamiltonian, fourier_basis,
                               hamiltonian, log_target, mcmc_run, metropolis_log_ratio,
                               sample_aux, sample_aux_tilted, sample_magnetization,
                               sample_self_normalized, sample_tn)
from socchain.spectrum import ModelParams, alpha_direct, compute_spectrum


def spec(n, r):
    return compute_spectrum(ModelParams(n, r))


def _combined_ok(a, sa, b, sb, k=3.0):
    return abs(a - b) <= k * math.hypot(sa, sb)

# ------------------------------------------------------------ weighted output


def test_weighted_samples_basics():
    ws = WeightedSamples([1.0, 2.0, 3.0], np.log([1.0, 1.0, 2.0]), proposals=6)
    assert len(ws) == 3
    np.testing.assert_allclose(ws.weights, [0.5, 0.5, 1.0])
    assert ws.mean() == pytest.approx(2.25)
    assert ws.variance() == pytest.approx(0.25 * 1.5625 + 0.25 * 0.0625 + 0.5 * 0.5625)
    assert ws.acceptance_rate == 0.5
    assert ws.effective_size() == pytest.approx(4 / 1.5)
    both = WeightedSamples.concatenate([ws, ws.scaled(2.0)])
    assert len(both) == 6 and both.proposals == 12
    with pytest.raises(ValueError):
        WeightedSamples([1.0], [0.0, 1.0])
    with pytest.raises(EmptyInput):
        WeightedSamples([], []).mean()


def test_weights_survive_huge_log_weights():
    ws = WeightedSamples([0.0, 1.0], [1000.0, 1000.0 + math.log(3)])
    assert ws.mean() == pytest.approx(0.75)

# ----------------------------------------------------------------- auxiliary


@pytest.mark.parametrize("n,r", [(32, 3), (33, 2)])
def test_aux_moments(n, r):
    s = spec(n, r)
    a, acc = sample_aux(s, np.random.default_rng(3), 10 ** 6)
    mean, var = np.sum(1 / s.betas), 2 * np.sum(1 / s.betas ** 2)
    assert abs(a.mean() - mean) <= 3 * math.sqrt(a.var() / a.size)
    c = a - a.mean()
    se_var = math.sqrt((np.mean(c ** 4) - a.var() ** 2) / a.size)
    assert abs(a.var() - var) <= 3 * se_var
    np.testing.assert_array_equal(acc, a < n)


def test_untilted_weights_are_flat(rng):
    ws = sample_aux_tilted(spec(16, 1), TiltPlan(0.0), rng, 1000)
    assert np.all(ws.log_weights == 0)


def test_tilt_matches_rejection():
    n = 32
    s = spec(n, 1)
    a, acc = sample_aux(s, np.random.default_rng(8), 10 ** 7)
    y = n - a[acc]
    plan = default_tilt(ModelParams(n, 1), "finite")
    ws = sample_aux_tilted(s, plan, np.random.default_rng(9), 10 ** 6)
    keep = ws.values < n
    cond = WeightedSamples(n - ws.values[keep], ws.log_weights[keep])
    assert _combined_ok(y.mean(), y.std() / math.sqrt(y.size), cond.mean(), cond.standard_error())
    # importance estimate of the acceptance probability itself
    w = np.exp(ws.log_weights) * keep
    assert _combined_ok(acc.mean(), math.sqrt(acc.mean() / acc.size), w.mean(),
                        w.std() / math.sqrt(w.size))


def test_tilt_conditional_mean_matches_quadrature():
    n = 64
    p = ModelParams(n, 1)
    s = compute_spectrum(p)
    plan = default_tilt(p, "finite")
    ref = integrate.quad(lambda x: x * conditional_density(s, plan, x), 1e-9, n - 1e-9,
                         limit=200, points=[1, 5, 20])[0]
    ws = sample_aux_tilted(s, plan, np.random.default_rng(10), 4 * 10 ** 5)
    keep = ws.values < n
    cond = WeightedSamples(n - ws.values[keep], ws.log_weights[keep])
    assert abs(cond.mean() - ref) <= 3 * cond.standard_error()


def test_tilted_acceptance_rate():
    p = ModelParams(4096, 1)
    s = compute_spectrum(p)
    ws = sample_aux_tilted(s, default_tilt(p, "finite"), np.random.default_rng(1), 20000)
    assert np.mean(ws.values < p.n) >= 0.2
    _, acc = sample_aux(s, np.random.default_rng(1), 20000)
    assert acc.mean() == 0


FUNCTIONALS = [
    lambda v: np.cos(v),
    lambda v: np.tanh(v) ** 2,
    lambda v: (np.abs(v) < 1).astype(float),
    lambda v: np.exp(-v * v),
    lambda v: np.abs(np.tanh(2 * v)),
]


@pytest.mark.parametrize("n,r", [(32, 1), (64, 3)])
def test_tilted_and_untilted_agree(n, r):
    p = ModelParams(n, r)
    s = compute_spectrum(p)
    plain = sample_self_normalized(s, TiltPlan(0.0), np.random.default_rng(21), 20000).scaled(n ** -0.5)
    tilt = sample_self_normalized(s, default_tilt(p, "finite"), np.random.default_rng(22),
                                  20000).scaled(n ** -0.5)
    for fn in FUNCTIONALS:
        assert _combined_ok(plain.mean(fn), plain.standard_error(fn),
                            tilt.mean(fn), tilt.standard_error(fn))


def test_self_normalized_symmetric():
    p = ModelParams(256, 2)
    ws = sample_self_normalized(compute_spectrum(p), default_tilt(p, "finite"),
                                np.random.default_rng(4), 50000)
    assert abs(ws.mean()) <= 3 * ws.standard_error()
    assert ws.proposals >= len(ws)
    with pytest.raises(EmptyInput):
        sample_self_normalized(compute_spectrum(p), TiltPlan(0.0), np.random.default_rng(4), 0)


def test_sample_tn():
    t = sample_tn(50, np.random.default_rng(5), 10 ** 6)
    assert abs(t.mean() - 1) <= 3 * t.std() / 1000
    c = t - t.mean()
    assert abs(t.var() - 2 / 50) <= 3 * math.sqrt((np.mean(c ** 4) - t.var() ** 2) / t.size)
    with pytest.raises(DomainError):
        sample_tn(0, np.random.default_rng(5))


def test_tn_independent_of_self_normalized():
    p = ModelParams(64, 3)
    s = compute_spectrum(p)
    ws = sample_self_normalized(s, TiltPlan(0.0), np.random.default_rng(6), 10 ** 5)
    t = sample_tn(p.n, np.random.default_rng(7), 10 ** 5)
    rho = np.corrcoef(np.abs(ws.values), t)[0, 1]
    assert abs(rho) <= 3 / math.sqrt(t.size)


def test_magnetization_reproducible_and_centred():
    p = ModelParams(128, 2)
    s = compute_spectrum(p)
    plan = default_tilt(p, "finite")
    a = sample_magnetization(s, plan, np.random.default_rng(12), 20000)
    b = sample_magnetization(s, plan, np.random.default_rng(12), 20000)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.log_weights, b.log_weights)
    assert abs(a.mean()) <= 3 * a.standard_error()

# --------------------------------------------------------------- spin energy


def test_hamiltonian_examples(rng):
    for n, r in [(10, 2), (17, 8)]:
        assert hamiltonian(np.ones(n), ModelParams(n, r)) == pytest.approx(-n / 2)
    p = ModelParams(17, 8)
    x = rng.normal(size=17)
    assert hamiltonian(x, p) == pytest.approx(-(x.sum() ** 2 - x @ x) / (4 * 8), rel=1e-12)


@pytest.mark.parametrize("n", [8, 64, 512])
def test_fourier_basis(n, rng):
    P = fourier_basis(n)
    np.testing.assert_allclose(P.T @ P, np.eye(n), atol=1e-10)
    r = max(1, n // 5)
    p = ModelParams(n, r)
    alpha = alpha_direct(p, np.arange(1, n + 1))
    for _ in range(100 if n <= 64 else 10):
        x = rng.normal(size=n)
        y = P @ x
        assert y[-1] == pytest.approx(x.sum() / math.sqrt(n), abs=1e-10)
        H = hamiltonian(x, p)
        assert H == pytest.approx(-0.5 * np.sum(alpha * y * y), abs=1e-9)
        two_term = -x.sum() ** 2 / (2 * n) - 0.5 * np.sum(alpha[:-1] * y[:-1] ** 2)
        assert H == pytest.approx(two_term, abs=1e-9)
    with pytest.raises(DomainError):
        fourier_basis(2)


def test_delta_hamiltonian_and_caches(rng):
    p = ModelParams(64, 5)
    c = SpinConfig.random(p, rng)
    assert delta_hamiltonian(c, p, 3, c.x[2]) == 0
    worst = 0.0
    for _ in range(1000):
        i = int(rng.integers(1, 65))
        new = c.x[i - 1] + rng.normal()
        before = hamiltonian(c.x, p)
        d = delta_hamiltonian(c, p, i, new)
        # linear in the step with the neighbour sum as slope
        assert d == pytest.approx(-(new - c.x[i - 1]) * c.nbr[i - 1] / (2 * p.r))
        c.update(i - 1, new)
        worst = max(worst, abs(hamiltonian(c.x, p) - before - d))
    assert worst <= 1e-10
    S, Q, H, nbr = c.recompute()
    assert abs(c.S - S) <= 1e-9 and abs(c.Q - Q) <= 1e-9 and abs(c.H - H) <= 1e-9
    np.testing.assert_allclose(c.nbr, nbr, atol=1e-9)
    with pytest.raises(IndexError):
        delta_hamiltonian(c, p, 0, 1.0)
    with pytest.raises(IndexError):
        delta_hamiltonian(c, p, 65, 1.0)


def test_spin_config_validation():
    p = ModelParams(8, 1)
    with pytest.raises(DomainError):
        SpinConfig(np.zeros(8), p)
    with pytest.raises(ValueError):
        SpinConfig(np.ones(7), p)


def test_detailed_balance_identity(rng):
    n = 16
    for _ in range(100):
        H0, H1 = rng.normal(size=2) * 5
        Q0, Q1 = rng.uniform(1, 40, size=2)
        lr = metropolis_log_ratio(H0, Q0, H1, Q1, n)
        assert lr == pytest.approx(-metropolis_log_ratio(H1, Q1, H0, Q0, n), abs=1e-12)
        lhs = log_target(H0, Q0, n) + min(0.0, lr)
        rhs = log_target(H1, Q1, n) + min(0.0, -lr)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def _batch_se(x, batches=50):
    m = x[: x.size // batches * batches].reshape(batches, -1).mean(axis=1)
    return m.std(ddof=1) / math.sqrt(batches)


def test_mcmc_temperature_mean():
    tr = mcmc_run(ModelParams(256, 3), 20000, 1.0, np.random.default_rng(13),
                  burn_in=2000, thin=2)
    assert tr.T.size == 10000
    assert 0.2 <= tr.acceptance <= 0.5
    assert abs(tr.T.mean() - 1) <= 3 * _batch_se(tr.T)


def test_mcmc_matches_exact_second_moment():
    p = ModelParams(16, 1)
    tr = mcmc_run(p, 200_000, 1.0, np.random.default_rng(14), burn_in=20000, thin=5)
    m2 = tr.S ** 2 / p.n
    exact = sample_magnetization(compute_spectrum(p), TiltPlan(0.0), np.random.default_rng(15),
                                 10 ** 5)
    ex = exact.mean(lambda v: v * v / p.n)
    se = exact.standard_error(lambda v: v * v / p.n)
    assert _combined_ok(m2.mean(), _batch_se(m2), ex, se)
    ks = ks_two_sample(weighted_ecdf(tr.S), weighted_ecdf(exact))
    assert ks < 0.05


def test_mcmc_validation():
    with pytest.raises(DomainError):
        mcmc_run(ModelParams(16, 1), 0, 1.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        mcmc_run(ModelParams(16, 1), 10, -1.0, np.random.default_rng(0))
