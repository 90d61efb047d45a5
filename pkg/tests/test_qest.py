import math

import numpy as np
import pytest
import scipy.sparse as sp

from hybriddft.cheb import ChebyshevExpansion, cheb_coefficients
from hybriddft.oracle import dense_fermi_diag
from hybriddft.hamiltonian import rescale, spectral_bounds
from hybriddft.qest import (
    BornShots,
    BoundedNoise,
    Eigensystem,
    Exact,
    QueryMeter,
    born_sample,
    born_weights,
    bounded_noise_estimate,
    estimate_density,
    exact_diag,
    lane_rng,
    queries_per_coordinate,
    repetitions,
)
from hybriddft.toymodels import make_chain


def random_htilde(n, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(-0.95, 0.95, n)
    return sp.csr_matrix((q * lam) @ q.T), q, lam


def raw(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    return ChebyshevExpansion(coeffs, 1.0, 0.0, 0.0, 2.0)


def test_exact_diag_diagonal_matrix():
    lam = np.linspace(-0.9, 0.9, 7)
    exp = cheb_coefficients(8.0, 0.2, 40)
    h = sp.diags(lam).tocsr()
    assert np.allclose(exact_diag(h, exp, np.arange(7)), exp(lam), atol=1e-14)
    assert exact_diag(h, exp, 3) == pytest.approx(exp(lam[3]), abs=1e-14)


def test_exact_diag_trace_and_identity():
    h, q, lam = random_htilde(40, 0)
    exp = cheb_coefficients(12.0, -0.5, 90)
    trace = exact_diag(h, exp, np.arange(40)).sum()
    assert abs(trace - exp(lam).sum()) <= 1e-9
    assert np.all(exact_diag(h, raw([1.0]), np.arange(40)) == 1.0)
    with pytest.raises(IndexError):
        exact_diag(h, exp, 40)


def test_born_diagonal_zero_variance():
    lam = np.array([-0.5, 0.1, 0.7])
    h = sp.diags(lam).tocsr()
    exp = cheb_coefficients(5.0, 0.0, 30)
    eig = Eigensystem.of(h)
    for seed in range(5):
        assert born_sample(eig, exp, 1, 1, np.random.default_rng(seed)) == pytest.approx(exp(0.1), abs=1e-15)


def test_born_two_by_two():
    h = sp.csr_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
    exp = cheb_coefficients(4.0, 0.0, 25)
    eig = Eigensystem.of(h)
    assert np.allclose(born_weights(eig, 0), [0.5, 0.5])
    rng = np.random.default_rng(0)
    shots = [born_sample(eig, exp, 0, 1, rng) for _ in range(2000)]
    values = {round(s, 12) for s in shots}
    assert values <= {round(exp(0.5), 12), round(exp(-0.5), 12)}
    limit = 0.5 * (exp(0.5) + exp(-0.5))
    big = born_sample(eig, exp, 0, 10**8, rng)
    spread = 0.5 * abs(exp(0.5) - exp(-0.5))
    assert abs(big - limit) <= 5 * spread / 1e4


def test_born_missing_eigensystem():
    with pytest.raises(ValueError):
        born_sample(None, raw([1.0]), 0, 10, np.random.default_rng(0))


def test_born_unbiased_32():
    h, q, lam = random_htilde(32, 1)
    exp = cheb_coefficients(6.0, 0.4, 60)
    eig = Eigensystem.of(h)
    exact = exact_diag(h, exp, np.arange(32))
    n_shots = 100_000
    outcomes = exp(eig.values)
    for j in range(32):
        w = born_weights(eig, j)
        sigma = math.sqrt(w @ outcomes**2 - (w @ outcomes) ** 2)
        mean = born_sample(eig, exp, j, n_shots, lane_rng(7, 0, j))
        assert abs(mean - exact[j]) <= 4 * sigma / math.sqrt(n_shots)


def test_second_moment_inequality():
    h, q, lam = random_htilde(24, 2)
    exp = cheb_coefficients(6.0, 0.0, 60)
    eig = Eigensystem.of(h)
    p = exp(eig.values)
    assert np.all(p > 0)
    for j in range(24):
        w = born_weights(eig, j)
        mean = w @ p
        second = w @ p**2
        assert second <= mean**2 + np.max(p**2) * (1 - w.min()) + 1e-15


def test_bounded_noise_degenerate_and_support():
    rng = np.random.default_rng(0)
    model = BoundedNoise(1e-300, 1e-300)
    assert bounded_noise_estimate(0.37, model, rng) == pytest.approx(0.37, abs=1e-290)
    model = BoundedNoise(0.01, 0.2)
    out = np.array([bounded_noise_estimate(0.5, model, rng, alpha=1.3) for _ in range(5000)])
    assert np.all(np.abs(out - 0.5) <= 1.3)


def test_bounded_noise_failure_fraction():
    model = BoundedNoise(0.01, 0.05)
    rng = np.random.default_rng(11)
    draws = np.array([bounded_noise_estimate(0.0, model, rng, alpha=1.0) for _ in range(10_000)])
    frac = np.mean(np.abs(draws) > model.eps)
    assert frac <= model.delta_fail + 3 * math.sqrt(model.delta_fail / 1e4)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        BornShots(0)
    with pytest.raises(ValueError):
        BoundedNoise(0.0, 0.1)
    with pytest.raises(ValueError):
        BoundedNoise(0.1, 1.0)


def test_estimate_exact_passthrough_and_meter():
    h, _, _ = random_htilde(20, 3)
    exp = cheb_coefficients(6.0, 0.0, 33)
    meter = QueryMeter()
    meter.next_iteration()
    sites = np.array([1, 4, 9, 12])
    out = estimate_density(h, exp, sites, Exact(), meter)
    assert np.array_equal(out, exact_diag(h, exp, sites))
    assert meter.total == 4 * 33 and meter.per_iteration == [132]
    with pytest.raises(ValueError):
        estimate_density(h, exp, [1, 1], Exact())


def test_estimate_against_dense_oracle_on_chain():
    system = make_chain(4, 16.0, 64, 4.0, width=0.8, stride=2)
    n = system.initial_density()
    h = system.hamiltonian(n)
    mu = system.initial_mu(n)
    res = rescale(h, spectral_bounds(h), system.beta, mu)
    exp = cheb_coefficients(res.beta_hat, res.log_c, 150)
    est = estimate_density(res.matrix, exp, system.sites, Exact())
    dense = dense_fermi_diag(h, system.beta, mu)[system.sites]
    assert np.max(np.abs(est - dense)) <= exp.certified_bound


def test_reproducible_and_order_independent_streams():
    h, _, _ = random_htilde(16, 4)
    exp = cheb_coefficients(4.0, 0.0, 20)
    for model in (BornShots(50, seed=3), BoundedNoise(0.05, 0.3, seed=3)):
        a = estimate_density(h, exp, np.arange(16), model, iteration=2)
        b = estimate_density(h, exp, np.arange(16), model, iteration=2)
        assert np.array_equal(a, b)
        rev = estimate_density(h, exp, np.arange(16)[::-1], model, iteration=2)
        assert np.array_equal(rev[::-1], a)
        other = estimate_density(h, exp, np.arange(16), model, iteration=3)
        assert not np.array_equal(a, other)


def test_query_accounting():
    assert repetitions(Exact()) == 1
    assert repetitions(BornShots(250)) == 250
    model = BoundedNoise(0.01, 0.1)
    assert repetitions(model, 1.0) == math.ceil(100 * math.log(10))
    assert queries_per_coordinate(model, 40, 0.0) == 40 * math.ceil(100 * math.log(10))
    half = BoundedNoise(0.005, 0.1)
    q1 = repetitions(model, 1.0)
    q2 = repetitions(half, 1.0)
    assert abs(q2 - 2 * q1) <= 1


def test_meter_rejects_negative():
    with pytest.raises(ValueError):
        QueryMeter().add(-1)
