"""Brute-force references: dense diagonalisation, exact Fermi-Dirac diagonals and SCF fixed points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cheb import fermi_dirac

DENSE_CAP = 4096
FALLBACK_DAMPING = 0.05


class DenseCapError(ValueError):
    pass


class OracleConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenseEigensystem:
    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, mat, cap: int = DENSE_CAP) -> DenseEigensystem:
        if mat.shape[0] > cap:
            raise DenseCapError(f"{mat.shape[0]} rows exceeds the dense cap {cap}")
        dense = mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat, dtype=float)
        w, u = np.linalg.eigh(dense)
        return cls(w, u)

    def fermi_diag(self, beta: float, mu: float) -> np.ndarray:
        return (self.vectors**2) @ fermi_dirac(self.values, beta, mu)


def dense_fermi_diag(mat, beta: float, mu: float, cap: int = DENSE_CAP) -> np.ndarray:
    """``diag f(H)`` by full diagonalisation."""
    return DenseEigensystem.of(mat, cap).fermi_diag(beta, mu)


def maxnorm_le_2norm_check(a: np.ndarray) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    two_norm = np.linalg.svd(a, compute_uv=False)[0]
    # round-off slack for the equality cases (e.g. permutation matrices)
    return bool(np.max(np.abs(a)) <= two_norm * (1 + 1e-12))


def optimal_damping(jacobian: np.ndarray) -> float:
    """Damping minimising ``max|1 - a + a λ|`` over the real parts of the Jacobian spectrum."""
    lam = np.linalg.eigvals(jacobian).real
    lo, hi = lam.min(), lam.max()
    if hi >= 1:
        raise OracleConvergenceError("Jacobian has an eigenvalue with real part >= 1")
    return float(min(1.0, 2.0 / (2.0 - lo - hi)))


def ground_truth(
    system,
    constrained: bool = False,
    mu: float | None = None,
    damping: float | None = None,
    n0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Fixed point of the dense SCF map by simple mixing.

    With ``constrained=True`` the chemical potential is re-solved at every step so
    that the prolongated output density integrates to the electron count.  The
    damping defaults to the value that is optimal for the finite-difference
    Jacobian at the starting density.
    """
    n = system.initial_density() if n0 is None else np.asarray(n0, dtype=float).copy()
    if mu is None:
        mu = system.initial_mu(n)

    def step_map(x):
        if constrained:
            m = system.dense_constrained_mu(x)
            return system.dense_map(x, m), m
        return system.dense_map(x, mu), mu

    if damping is None:
        from .scf import jacobian_fd

        jac = jacobian_fd(system, n, mu=mu, dense=True, constrained=constrained)
        try:
            damping = 0.9 * optimal_damping(jac) if np.any(jac) else 1.0
        except OracleConvergenceError:
            # the start is outside the contractive region; mix cautiously
            damping = FALLBACK_DAMPING

    best = np.inf
    for _ in range(max_iter):
        f, mu_k = step_map(n)
        residual = np.max(np.abs(f - n))
        if residual > 10 * best:
            # the mixing is unstable here; shrink the step and retry
            damping *= 0.5
            n, best = best_n, np.inf
            continue
        if residual < best:
            best, best_n = residual, n
        new = (1 - damping) * n + damping * f
        change = np.linalg.norm(new - n) / max(np.linalg.norm(new), 1e-300)
        n = new
        if not np.all(np.isfinite(n)):
            raise OracleConvergenceError("dense SCF produced non-finite densities")
        if change < tol:
            f, mu_k = step_map(n)
            if np.max(np.abs(n - f)) <= 1e-10 * max(1.0, np.max(np.abs(n))):
                return f if damping == 1.0 else n, mu_k
    raise OracleConvergenceError(f"dense SCF did not converge within {max_iter} iterations")
