"""Kohn-Sham Hamiltonian assembly, spectral bounds and rescaling to [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.special import erf, exp1

from .grid import DIRICHLET, PERIODIC, Grid, build_laplacian, prolongate, solve_poisson


@dataclass(frozen=True)
class AtomSystem:
    """Nuclei modelled as Gaussian pseudocharges ``-Z g_σ(r - R)``."""

    positions: np.ndarray
    charges: np.ndarray
    widths: np.ndarray = field(default=None)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0:
            pos = pos.reshape(0, max(pos.shape[-1], 1))
        z = np.atleast_1d(np.asarray(self.charges, dtype=float))
        if len(z) != len(pos):
            raise ValueError("one charge per atom required")
        if np.any(z <= 0):
            raise ValueError("charges must be positive")
        w = self.widths
        w = np.full(len(z), 1.0) if w is None else np.broadcast_to(np.asarray(w, float), z.shape)
        if np.any(w <= 0):
            raise ValueError("gaussian widths must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", z)
        object.__setattr__(self, "widths", np.array(w))

    @classmethod
    def empty(cls, dims: int = 1) -> AtomSystem:
        return cls(np.zeros((0, dims)), np.zeros(0))

    @property
    def n_atoms(self) -> int:
        return len(self.charges)

    @property
    def total_charge(self) -> float:
        return float(self.charges.sum())

    def check_inside(self, grid: Grid) -> None:
        if self.n_atoms == 0:
            return
        if self.positions.shape[1] != grid.dims:
            raise ValueError(f"atom positions are {self.positions.shape[1]}-D, grid is {grid.dims}-D")
        lengths = np.asarray(grid.lengths)
        if np.any(self.positions < 0) or np.any(self.positions > lengths):
            raise ValueError("atom positions must lie inside the box")


@dataclass(frozen=True)
class SpectralBounds:
    lower: float
    upper: float
    method: str
    margin: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"degenerate spectral interval [{self.lower}, {self.upper}]")

    @property
    def span(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.upper + self.lower)


class Rescaled(NamedTuple):
    """``H̃ = (2/span)(H - mid I)`` together with ``β̂`` and ``log C``.

    ``f(H) = 1 / (1 + C exp(β̂ H̃))``; ``C`` is kept as a logarithm because
    ``β (mid - μ)`` easily exceeds the double-precision exponent range.
    """

    matrix: sp.csr_matrix
    beta_hat: float
    log_c: float

    @property
    def c(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_c))


def _displacements(grid: Grid, center: np.ndarray) -> np.ndarray:
    x = grid.coordinates() - center
    for axis in range(grid.dims):
        if grid.bc[axis] == PERIODIC:
            length = grid.lengths[axis]
            x[:, axis] -= length * np.round(x[:, axis] / length)
    return x


def pseudocharge_density(grid: Grid, atoms: AtomSystem) -> np.ndarray:
    """``b(r) = -Σ_a Z_a g_σ(r - R_a)``, each Gaussian renormalised to integrate to one on the grid."""
    atoms.check_inside(grid)
    b = np.zeros(grid.n_points)
    for pos, z, sigma in zip(atoms.positions, atoms.charges, atoms.widths):
        r2 = np.sum(_displacements(grid, pos) ** 2, axis=1)
        g = np.exp(-0.5 * r2 / sigma**2)
        b -= z * g / (g.sum() * grid.cell_volume)
    return b


def _gaussian_free_space_potential(r: np.ndarray, sigma: float, dims: int) -> np.ndarray:
    """Free-space potential of a unit Gaussian charge under ``-(1/4π)∇²V = g``."""
    s2 = np.sqrt(2.0) * sigma
    if dims == 1:
        # Green's function -2π|x|
        return -2 * np.pi * (r * erf(r / s2) + sigma * np.sqrt(2 / np.pi) * np.exp(-(r**2) / s2**2))
    if dims == 2:
        # Green's function -2 ln r; the combination stays finite at r = 0
        u = r**2 / s2**2
        out = np.empty_like(r)
        small = u < 1e-12
        out[small] = -(np.log(s2**2) - np.euler_gamma)
        out[~small] = -(np.log(r[~small] ** 2) + exp1(u[~small]))
        return out
    out = np.empty_like(r)
    small = r < 1e-12
    out[small] = np.sqrt(2 / np.pi) / sigma
    out[~small] = erf(r[~small] / s2) / r[~small]
    return out


def external_potential(grid: Grid, atoms: AtomSystem, order: int = 2) -> np.ndarray:
    """Potential generated by the pseudocharges alone.

    On all-periodic grids the Poisson equation is solved with a uniform
    neutralising background; otherwise the free-space Gaussian potentials are
    summed analytically.
    """
    atoms.check_inside(grid)
    if atoms.n_atoms == 0:
        return np.zeros(grid.n_points)
    if grid.all_periodic:
        b = pseudocharge_density(grid, atoms)
        return solve_poisson(grid, b - b.mean(), order)
    v = np.zeros(grid.n_points)
    for pos, z, sigma in zip(atoms.positions, atoms.charges, atoms.widths):
        r = np.sqrt(np.sum(_displacements(grid, pos) ** 2, axis=1))
        v -= z * _gaussian_free_space_potential(r, sigma, grid.dims)
    return v


# Perdew-Zunger (1981) parametrisation of the unpolarised correlation energy
_PZ_GAMMA, _PZ_BETA1, _PZ_BETA2 = -0.1423, 1.0529, 0.3334
_PZ_A, _PZ_B, _PZ_C, _PZ_D = 0.0311, -0.048, 0.0020, -0.0116


def lda_exchange(n: np.ndarray) -> np.ndarray:
    return -np.cbrt(3.0 * np.asarray(n, dtype=float) / np.pi)


def lda_correlation(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    vc = np.zeros_like(n)
    pos = n > 0
    rs = np.cbrt(3.0 / (4.0 * np.pi * n[pos]))
    hi = rs >= 1.0
    sq = np.sqrt(rs[hi])
    den = 1.0 + _PZ_BETA1 * sq + _PZ_BETA2 * rs[hi]
    ec = _PZ_GAMMA / den
    v = np.empty_like(rs)
    v[hi] = ec * (1.0 + 7.0 / 6.0 * _PZ_BETA1 * sq + 4.0 / 3.0 * _PZ_BETA2 * rs[hi]) / den
    lo = ~hi
    r, lnr = rs[lo], np.log(rs[lo])
    v[lo] = (
        _PZ_A * lnr
        + (_PZ_B - _PZ_A / 3.0)
        + 2.0 / 3.0 * _PZ_C * r * lnr
        + (2.0 * _PZ_D - _PZ_C) / 3.0 * r
    )
    vc[pos] = v
    return vc


def lda_xc(n: np.ndarray) -> np.ndarray:
    """LDA exchange-correlation potential: Slater exchange plus Perdew-Zunger correlation."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("lda_xc requires a nonnegative density")
    return lda_exchange(n) + lda_correlation(n)


def diagonal_positions(mat: sp.csr_matrix) -> np.ndarray | None:
    """Indices into ``mat.data`` of the diagonal entries, or None if any is structurally absent."""
    pos = np.empty(mat.shape[0], dtype=np.int64)
    for i in range(mat.shape[0]):
        start, stop = mat.indptr[i], mat.indptr[i + 1]
        hit = np.nonzero(mat.indices[start:stop] == i)[0]
        if len(hit) == 0:
            return None
        pos[i] = start + hit[0]
    return pos


def shift_diagonal(mat: sp.csr_matrix, values, diag_pos: np.ndarray | None = None) -> sp.csr_matrix:
    """``mat + diag(values)`` without changing the sparsity pattern when the diagonal is stored."""
    out = mat.copy()
    if diag_pos is None:
        diag_pos = diagonal_positions(out)
    if diag_pos is None:
        return (out + sp.diags(np.broadcast_to(values, (mat.shape[0],)))).tocsr()
    out.data[diag_pos] += values
    return out


class KohnShamModel:
    """Caches the density-independent pieces of ``H(n) = -1/2 ∇²_δ + V_δ(n)``."""

    def __init__(self, grid: Grid, atoms: AtomSystem, order: int = 2):
        atoms.check_inside(grid)
        self.grid = grid
        self.atoms = atoms
        self.order = order
        self.kinetic = build_laplacian(grid, order)
        self._diag_pos = diagonal_positions(self.kinetic)
        self.pseudocharge = pseudocharge_density(grid, atoms) if atoms.n_atoms else np.zeros(grid.n_points)
        self._v_ext = None if grid.all_periodic else external_potential(grid, atoms, order)

    def potential(self, coarse_density: np.ndarray) -> np.ndarray:
        n = prolongate(coarse_density, self.grid)
        if np.any(n < 0):
            raise ValueError("density must be nonnegative")
        if self.grid.all_periodic:
            rho = n + self.pseudocharge
            electrostatic = solve_poisson(self.grid, rho - rho.mean(), self.order)
        else:
            electrostatic = solve_poisson(self.grid, n, self.order) + self._v_ext
        return electrostatic + lda_xc(n)

    def hamiltonian(self, coarse_density: np.ndarray) -> sp.csr_matrix:
        return shift_diagonal(self.kinetic, self.potential(coarse_density), self._diag_pos)


def assemble(grid: Grid, coarse_density: np.ndarray, atoms: AtomSystem, order: int = 2) -> sp.csr_matrix:
    """Kohn-Sham matrix for a coarse-grid density.

    The density is prolongated to the fine grid; the electrostatic potential of
    electrons plus pseudocharges (the Hartree and external terms together) is
    obtained from one Poisson solve, the LDA potential is added pointwise, and
    the sum lands on the diagonal of the kinetic stencil.
    """
    coarse_density = np.asarray(coarse_density, dtype=float)
    if coarse_density.shape != (grid.n_coarse,):
        raise ValueError(f"expected {grid.n_coarse} coarse values, got {coarse_density.shape}")
    return KohnShamModel(grid, atoms, order).hamiltonian(coarse_density)


def gershgorin_bounds(mat: sp.csr_matrix) -> SpectralBounds:
    diag = mat.diagonal()
    radius = np.asarray(abs(mat).sum(axis=1)).ravel() - np.abs(diag)
    lo, hi = float(np.min(diag - radius)), float(np.max(diag + radius))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return SpectralBounds(lo, hi, "gershgorin")


def lanczos_extremes(mat, k: int, rng: np.random.Generator) -> tuple[float, float] | None:
    """Extreme Ritz values after ``k`` Lanczos steps with full reorthogonalisation.

    Returns None on breakdown (an invariant subspace was found before ``k`` steps).
    """
    n = mat.shape[0]
    k = min(k, n)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    basis = np.zeros((k, n))
    alpha = np.zeros(k)
    beta = np.zeros(max(k - 1, 0))
    basis[0] = q
    for j in range(k):
        w = mat @ basis[j]
        alpha[j] = basis[j] @ w
        if j == k - 1:
            break
        w -= alpha[j] * basis[j]
        if j:
            w -= beta[j - 1] * basis[j - 1]
        w -= basis[: j + 1].T @ (basis[: j + 1] @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-10 * max(1.0, abs(alpha[j])):
            return None
        basis[j + 1] = w / beta[j]
    ritz = np.linalg.eigvalsh(np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1))
    return float(ritz[0]), float(ritz[-1])


def spectral_bounds(
    mat: sp.csr_matrix,
    method: str = "gershgorin",
    k_lanczos: int = 20,
    margin: float = 1.05,
    seed: int = 0,
) -> SpectralBounds:
    """Interval enclosing the spectrum of a symmetric matrix.

    ``"lanczos"`` widens the extreme Ritz values about their midpoint by
    ``margin`` and clamps the result to the Gershgorin enclosure.  Both ends come
    from a single Krylov run; on breakdown the Gershgorin interval is returned.
    """
    gersh = gershgorin_bounds(mat)
    if method == "gershgorin":
        return gersh
    if method != "lanczos":
        raise ValueError(f"unknown bounds method {method!r}")
    if margin < 1:
        raise ValueError("margin must be >= 1")
    ext = lanczos_extremes(mat, k_lanczos, np.random.default_rng(seed))
    if ext is None:
        return SpectralBounds(gersh.lower, gersh.upper, "gershgorin (lanczos breakdown)")
    mid, half = 0.5 * (ext[0] + ext[1]), 0.5 * (ext[1] - ext[0]) * margin
    lo = max(mid - half, gersh.lower)
    hi = min(mid + half, gersh.upper)
    if not lo < hi:
        return SpectralBounds(gersh.lower, gersh.upper, "gershgorin (lanczos breakdown)")
    return SpectralBounds(lo, hi, "lanczos", margin)


def rescale(mat: sp.csr_matrix, bounds: SpectralBounds, beta: float, mu: float) -> Rescaled:
    if beta <= 0:
        raise ValueError("beta must be positive")
    half = 0.5 * bounds.span
    scaled = shift_diagonal(mat, -bounds.midpoint)
    scaled.data /= half
    return Rescaled(scaled, half * beta, beta * (bounds.midpoint - mu))
