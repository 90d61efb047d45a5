"""Test systems for the SCF drivers.

Every system maps a coarse density ``n`` (length ``n_coarse``) to estimates of the
updated density ``F̂(n)`` at requested coordinates.  Densities are physical
(electrons per unit volume): the diagonal of ``f(H)`` is divided by the cell
volume, so ``Σ n δ^d`` counts electrons.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import brentq
from scipy.stats import ortho_group

from .cheb import cheb_coefficients, fermi_dirac, select_degree
from .grid import Grid, prolongate
from .hamiltonian import AtomSystem, KohnShamModel, pseudocharge_density, rescale, spectral_bounds
from .oracle import DenseEigensystem
from .qest import (
    BornShots,
    Eigensystem,
    Exact,
    bounded_noise_estimate,
    estimate_density,
    lane_rng,
    repetitions,
)


def _bracket_root(func, lo: float, hi: float) -> float:
    """Root of an increasing function, widening the bracket as needed."""
    width = max(hi - lo, 1.0)
    while func(lo) > 0:
        lo -= width
        width *= 2
    while func(hi) < 0:
        hi += width
        width *= 2
    return brentq(func, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


class KohnShamSystem:
    """Real-space Kohn-Sham problem on a grid with Gaussian pseudocharges."""

    def __init__(
        self,
        grid: Grid,
        atoms: AtomSystem,
        beta: float,
        order: int = 2,
        n_electrons: float | None = None,
    ):
        self.grid = grid
        self.atoms = atoms
        self.beta = float(beta)
        self.model = KohnShamModel(grid, atoms, order)
        self.n_electrons = atoms.total_charge if n_electrons is None else float(n_electrons)
        self.sites = grid.coarse_indices
        self.density_scale = 1.0 / grid.cell_volume

    @property
    def n_coarse(self) -> int:
        return len(self.sites)

    def hamiltonian(self, n: np.ndarray):
        return self.model.hamiltonian(np.maximum(n, 0.0))

    def electron_count(self, n: np.ndarray) -> float:
        """``Σ |n| δ^d`` after prolongation to the fine grid."""
        return float(np.abs(prolongate(n, self.grid)).sum() * self.grid.cell_volume)

    def initial_density(self) -> np.ndarray:
        """Superposed atom-centred Gaussians normalised to the electron count."""
        if self.atoms.n_atoms == 0:
            n = np.ones(self.n_coarse)
        else:
            n = -pseudocharge_density(self.grid, self.atoms)[self.sites]
        return n * self.n_electrons / self.electron_count(n)

    def initial_mu(self, n: np.ndarray) -> float:
        """Chemical potential matching the electron count for the frozen Hamiltonian ``H(n)``."""
        eig = DenseEigensystem.of(self.hamiltonian(n))
        target = self.n_electrons
        return _bracket_root(
            lambda mu: fermi_dirac(eig.values, self.beta, mu).sum() - target,
            eig.values[0],
            eig.values[-1],
        )

    def expansion(self, h, mu: float, cfg):
        bounds = spectral_bounds(h, getattr(cfg, "bounds_method", "gershgorin"), seed=getattr(cfg, "seed", 0))
        resc = rescale(h, bounds, self.beta, mu)
        degree = getattr(cfg, "degree", None)
        if degree is None:
            degree, _ = select_degree(resc.beta_hat, cfg.eps_poly, resc.log_c)
        return resc, cheb_coefficients(resc.beta_hat, resc.log_c, degree)

    def estimate(self, n, mu, indices, cfg, meter=None, iteration: int = 0) -> np.ndarray:
        resc, exp = self.expansion(self.hamiltonian(n), mu, cfg)
        noise = cfg.noise
        eig = Eigensystem.of(resc.matrix) if isinstance(noise, BornShots) else None
        indices = np.asarray(indices, dtype=np.int64)
        vals = estimate_density(
            resc.matrix, exp, self.sites[indices], noise, meter, iteration, eig, lanes=indices
        )
        return vals * self.density_scale

    def exact_map(self, n, mu, cfg) -> np.ndarray:
        resc, exp = self.expansion(self.hamiltonian(n), mu, cfg)
        return estimate_density(resc.matrix, exp, self.sites, Exact()) * self.density_scale

    def dense_map(self, n, mu) -> np.ndarray:
        eig = DenseEigensystem.of(self.hamiltonian(n))
        return eig.fermi_diag(self.beta, mu)[self.sites] * self.density_scale

    def dense_constrained_mu(self, n) -> float:
        """``μ`` with ``Ĝ(F(n)) = 0`` for the exact map at fixed ``H(n)``."""
        eig = DenseEigensystem.of(self.hamiltonian(n))
        weights = eig.vectors[self.sites] ** 2 * self.density_scale
        return _bracket_root(
            lambda mu: self.electron_count(weights @ fermi_dirac(eig.values, self.beta, mu))
            - self.n_electrons,
            eig.values[0],
            eig.values[-1],
        )


class FrozenPotentialSystem(KohnShamSystem):
    """A Kohn-Sham system whose Hamiltonian ignores the input density, so ``F`` is constant."""

    def __init__(self, grid: Grid, hamiltonian, beta: float, n_electrons: float = 1.0):
        super().__init__(grid, AtomSystem.empty(grid.dims), beta, n_electrons=n_electrons)
        self._h = hamiltonian.tocsr()

    def hamiltonian(self, n):
        return self._h


class LinearSurrogate:
    """Affine fixed-point problem ``F(n) = J n + b`` with prescribed contraction.

    Shot noise is emulated by averaging ``N_s`` Rademacher draws of size
    ``shot_scale`` around the exact value, which is unbiased and bounded like a
    projective measurement of an observable with eigenvalues in ``[-s, s]``.
    """

    beta = None
    density_scale = 1.0
    nonnegative = False  # abstract coordinates, so the density clip does not apply

    def __init__(self, jacobian: np.ndarray, offset: np.ndarray, shot_scale: float = 1.0):
        self.jacobian = np.asarray(jacobian, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.shot_scale = float(shot_scale)
        self.fixed_point = np.linalg.solve(np.eye(len(self.offset)) - self.jacobian, self.offset)

    @property
    def n_coarse(self) -> int:
        return len(self.offset)

    def initial_density(self) -> np.ndarray:
        return np.zeros(self.n_coarse)

    def initial_mu(self, n) -> float:
        return 0.0

    def electron_count(self, n) -> float:
        return float(np.sum(np.abs(n)))

    def exact_map(self, n, mu=0.0, cfg=None) -> np.ndarray:
        return self.jacobian @ n + self.offset

    def dense_map(self, n, mu=0.0) -> np.ndarray:
        return self.exact_map(n)

    def dense_constrained_mu(self, n) -> float:
        raise NotImplementedError("the linear surrogate has no chemical potential")

    def estimate(self, n, mu, indices, cfg, meter=None, iteration: int = 0) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        exact = self.exact_map(n)[indices]
        noise = cfg.noise
        if meter is not None:
            meter.add(len(indices) * repetitions(noise))
        if isinstance(noise, Exact):
            return exact
        out = np.empty_like(exact)
        for i, (lane, val) in enumerate(zip(indices, exact)):
            rng = lane_rng(noise.seed, iteration, lane)
            if isinstance(noise, BornShots):
                ups = rng.binomial(noise.shots, 0.5)
                out[i] = val + self.shot_scale * (2 * ups - noise.shots) / noise.shots
            else:
                out[i] = bounded_noise_estimate(val, noise, rng, self.shot_scale)
        return out


def make_chain(
    n_atoms: int = 8,
    length: float = 32.0,
    points: int = 256,
    beta: float = 10.0,
    charges=None,
    width: float = 1.0,
    stride: int = 4,
    n_electrons: float | None = None,
    order: int = 2,
    jitter: float = 0.0,
    seed: int = 0,
) -> KohnShamSystem:
    """Periodic 1D chain of equally spaced atoms with alternating charges (3, 1, 3, 1, ...).

    ``jitter > 0`` displaces each atom by a seeded uniform offset in
    ``[-jitter, jitter]``, breaking the mirror and translation symmetries that
    otherwise confine noiseless iterations to a symmetric subspace.
    """
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    if points & (points - 1):
        warnings.warn(f"{points} grid points is not a power of two", stacklevel=2)
    spacing = length / n_atoms
    if spacing < 2 * length / points:
        raise ValueError("atoms are closer than two grid spacings")
    if charges is None:
        charges = [3.0 if i % 2 == 0 else 1.0 for i in range(n_atoms)]
    charges = np.resize(np.asarray(charges, dtype=float), n_atoms)
    if not 0 <= jitter < spacing / 2:
        raise ValueError("jitter must lie in [0, spacing / 2)")
    positions = ((np.arange(n_atoms) + 0.5) * spacing)[:, None]
    if jitter:
        positions = positions + np.random.default_rng(seed).uniform(-jitter, jitter, size=positions.shape)
    grid = Grid((points,), (length,), ("periodic",), (stride,))
    atoms = AtomSystem(positions, charges, width)
    return KohnShamSystem(grid, atoms, beta, order, n_electrons)


def make_frozen(system: KohnShamSystem, n: np.ndarray | None = None) -> FrozenPotentialSystem:
    """Freeze a Kohn-Sham system's Hamiltonian at density ``n`` (default: its initial guess)."""
    n = system.initial_density() if n is None else n
    return FrozenPotentialSystem(system.grid, system.hamiltonian(n), system.beta, system.n_electrons)


def make_linear_surrogate(
    n_coords: int,
    target_c: float,
    seed: int = 0,
    damping: float = 1.0,
    shot_scale: float = 1.0,
) -> LinearSurrogate:
    """Random symmetric ``J`` whose damped map ``(1-a)I + aJ`` has every eigenvalue equal to ``±c``.

    Uniform moduli make the contraction factor exact in every direction.
    """
    if not 0 <= target_c < 1:
        raise ValueError("target_c must lie in [0, 1)")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=n_coords)
    damped = signs * target_c
    lam = (damped - (1 - damping)) / damping
    q = ortho_group.rvs(n_coords, random_state=rng) if n_coords > 1 else np.ones((1, 1))
    jac = (q * lam) @ q.T
    jac = 0.5 * (jac + jac.T)
    if target_c == 0 and damping == 1:
        jac = np.zeros_like(jac)
    fixed_point = rng.uniform(0.5, 1.5, size=n_coords)
    return LinearSurrogate(jac, fixed_point - jac @ fixed_point, shot_scale)


def contraction_factor(system: LinearSurrogate, damping: float) -> float:
    m = (1 - damping) * np.eye(system.n_coarse) + damping * system.jacobian
    return float(np.max(np.abs(np.linalg.eigvals(m))))

