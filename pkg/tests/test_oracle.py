import numpy as np
import pytest
import scipy.sparse as sp

from hybriddft.cheb import fermi_dirac
from hybriddft.oracle import (
    DenseCapError,
    DenseEigensystem,
    dense_fermi_diag,
    ground_truth,
    maxnorm_le_2norm_check,
    optimal_damping,
)
from hybriddft.toymodels import make_frozen


def test_eigensystem_invariants():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 50))
    h = a + a.T
    eig = DenseEigensystem.of(h)
    assert np.all(np.diff(eig.values) >= 0)
    u = eig.vectors
    assert np.max(np.abs(u.T @ u - np.eye(50))) <= 1e-10
    assert np.max(np.abs(h - (u * eig.values) @ u.T)) <= 1e-9 * np.max(np.abs(h))


def test_half_filling_at_mu():
    h = sp.identity(6, format="csr") * 0.3
    assert np.allclose(dense_fermi_diag(h, 10.0, 0.3), 0.5)


def test_low_temperature_counts_states():
    lam = np.r_[np.linspace(-2, -1, 5), np.linspace(1, 2, 7)]
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    h = (q * lam) @ q.T
    beta = 50.0  # β × (distance to μ = 0) = 50 > 40
    d = dense_fermi_diag(sp.csr_matrix(h), beta, 0.0)
    assert abs(d.sum() - 5) <= 1e-6
    projector = q[:, :5] @ q[:, :5].T
    assert np.max(np.abs(d - np.diag(projector))) <= 1e-6


def test_trace_identity_and_range():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((30, 30))
    h = sp.csr_matrix(a + a.T)
    d = dense_fermi_diag(h, 2.0, 0.5)
    assert abs(d.sum() - fermi_dirac(np.linalg.eigvalsh(h.toarray()), 2.0, 0.5).sum()) <= 1e-10
    assert np.all((d >= 0) & (d <= 1))


def test_dense_cap():
    with pytest.raises(DenseCapError):
        dense_fermi_diag(sp.identity(20, format="csr"), 1.0, 0.0, cap=10)


def test_maxnorm_examples():
    assert maxnorm_le_2norm_check(np.eye(7))
    assert maxnorm_le_2norm_check(np.ones((9, 9)))
    rng = np.random.default_rng(3)
    assert all(maxnorm_le_2norm_check(rng.standard_normal((32, 32))) for _ in range(1000))
    with pytest.raises(ValueError):
        maxnorm_le_2norm_check(np.ones((2, 3)))


def test_optimal_damping():
    jac = np.diag([-3.0, 0.5])
    a = optimal_damping(jac)
    assert a == pytest.approx(2 / (2 + 3 - 0.5))
    rates = [np.max(np.abs(1 - b + b * np.array([-3.0, 0.5]))) for b in (a - 0.01, a, a + 0.01)]
    assert rates[1] <= min(rates[0], rates[2])


def test_frozen_ground_truth_is_one_step(small_chain):
    frozen = make_frozen(small_chain)
    mu = frozen.initial_mu(frozen.initial_density())
    n_star, mu_star = ground_truth(frozen, mu=mu)
    assert mu_star == mu
    assert np.array_equal(n_star, frozen.dense_map(frozen.initial_density(), mu))


def test_chain_residual_and_constraint(small_chain):
    n_star, mu_star = ground_truth(small_chain, constrained=True)
    f = small_chain.dense_map(n_star, mu_star)
    assert np.max(np.abs(n_star - f)) <= 1e-10 * max(1.0, n_star.max())
    count = small_chain.electron_count(n_star)
    assert abs(count - small_chain.n_electrons) <= 1e-8


def test_fixed_mu_residual(small_chain):
    mu = small_chain.initial_mu(small_chain.initial_density())
    n_star, _ = ground_truth(small_chain, mu=mu)
    assert np.max(np.abs(n_star - small_chain.dense_map(n_star, mu))) <= 1e-10 * max(1.0, n_star.max())


def test_independent_of_start(small_chain):
    mu = small_chain.initial_mu(small_chain.initial_density())
    a, _ = ground_truth(small_chain, mu=mu)
    perturbed = small_chain.initial_density() * (1 + 0.05 * np.cos(np.arange(small_chain.n_coarse)))
    b, _ = ground_truth(small_chain, mu=mu, n0=perturbed)
    assert np.max(np.abs(a - b)) <= 1e-9
