"""Real-space grids, finite-difference Laplacians, Poisson solves and coarse-grid interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PERIODIC = "periodic"
DIRICHLET = "dirichlet"

# second-derivative stencils (offset -> weight) for unit spacing
_STENCILS = {
    2: {0: -2.0, 1: 1.0},
    4: {0: -5.0 / 2.0, 1: 4.0 / 3.0, 2: -1.0 / 12.0},
}


class PoissonCompatibilityError(ValueError):
    """Raised when a periodic Poisson problem has a non-neutral source."""


class PoissonSolverError(RuntimeError):
    """Raised when the iterative Poisson solve fails to converge."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid with a strided coarse subgrid.

    ``extents`` are point counts per axis, ``lengths`` the box lengths in Bohr and
    ``bc`` one of ``"periodic"`` / ``"dirichlet"`` per axis.  Periodic points sit at
    ``i * spacing``; Dirichlet points are cell centred, ``(i + 1/2) * spacing``, with
    zero ghost values one spacing outside the box.
    """

    extents: tuple[int, ...]
    lengths: tuple[float, ...]
    bc: tuple[str, ...]
    coarse_stride: tuple[int, ...]

    def __post_init__(self):
        d = len(self.extents)
        if d not in (1, 2, 3):
            raise ValueError(f"grid must have 1, 2 or 3 axes, got {d}")
        for name in ("lengths", "bc", "coarse_stride"):
            if len(getattr(self, name)) != d:
                raise ValueError(f"{name} must have one entry per axis")
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "bc", tuple(b.lower() for b in self.bc))
        object.__setattr__(self, "coarse_stride", tuple(int(s) for s in self.coarse_stride))
        for e, length, b, s in zip(self.extents, self.lengths, self.bc, self.coarse_stride):
            if e < 1:
                raise ValueError("extents must be positive")
            if not length > 0:
                raise ValueError("lengths must be positive")
            if b not in (PERIODIC, DIRICHLET):
                raise ValueError(f"unknown boundary condition {b!r}")
            if s < 1 or s > e:
                raise ValueError(f"coarse stride {s} out of range for {e} points")
            if b == PERIODIC and e % s:
                raise ValueError(f"coarse stride {s} must divide {e} on a periodic axis")

    @classmethod
    def uniform(cls, dims: int, points: int, length: float, bc: str = PERIODIC, stride: int = 1):
        return cls((points,) * dims, (length,) * dims, (bc,) * dims, (stride,) * dims)

    @property
    def dims(self) -> int:
        return len(self.extents)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.extents))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(length / e for length, e in zip(self.lengths, self.extents))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def all_periodic(self) -> bool:
        return all(b == PERIODIC for b in self.bc)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        offset = 0.5 if self.bc[axis] == DIRICHLET else 0.0
        return (np.arange(self.extents[axis]) + offset) * h

    def coordinates(self) -> np.ndarray:
        """Point coordinates, shape ``(n_points, dims)``, in C (row-major) order."""
        axes = np.meshgrid(*(self.axis_coordinates(a) for a in range(self.dims)), indexing="ij")
        return np.stack([x.ravel() for x in axes], axis=1)

    def coarse_axis_indices(self, axis: int) -> np.ndarray:
        e, s = self.extents[axis], self.coarse_stride[axis]
        idx = np.arange(0, e, s)
        if self.bc[axis] == DIRICHLET and idx[-1] != e - 1:
            # close the last interval so hats cover every fine point
            idx = np.append(idx, e - 1)
        return idx

    @cached_property
    def coarse_indices(self) -> np.ndarray:
        return select_interpolation_points(self)

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_indices)


def _laplacian_1d(n: int, h: float, bc: str, order: int) -> sp.csr_matrix:
    stencil = _STENCILS[order]
    width = 2 * max(stencil) + 1
    if n < width:
        raise ValueError(f"{n} points is fewer than the order-{order} stencil width {width}")
    rows, cols, vals = [], [], []
    for i in range(n):
        for off, w in stencil.items():
            for j in {i + off, i - off}:
                if bc == PERIODIC:
                    j %= n
                elif not 0 <= j < n:
                    continue
                rows.append(i)
                cols.append(j)
                vals.append(w / h**2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def laplacian(grid: Grid, order: int = 2) -> sp.csr_matrix:
    """Finite-difference Laplacian ``∇²_δ`` as a CSR matrix."""
    if order not in _STENCILS:
        raise ValueError(f"order must be 2 or 4, got {order}")
    mats = [
        _laplacian_1d(e, h, b, order)
        for e, h, b in zip(grid.extents, grid.spacing, grid.bc)
    ]
    total = sp.csr_matrix((grid.n_points, grid.n_points))
    for axis, m in enumerate(mats):
        left = sp.identity(int(np.prod(grid.extents[:axis])), format="csr")
        right = sp.identity(int(np.prod(grid.extents[axis + 1 :])), format="csr")
        total = total + sp.kron(sp.kron(left, m), right, format="csr")
    total = total.tocsr()
    total.sum_duplicates()
    total.sort_indices()
    return total


def build_laplacian(grid: Grid, order: int = 2) -> sp.csr_matrix:
    """Kinetic matrix ``-1/2 ∇²_δ``; real symmetric, ``1 + order * dims`` nonzeros per interior row."""
    kin = laplacian(grid, order)
    kin.data *= -0.5
    return kin


def _periodic_symbol(grid: Grid, order: int) -> np.ndarray:
    """Eigenvalues of ``-∇²_δ`` on an all-periodic grid, laid out like ``fftn`` output."""
    stencil = _STENCILS[order]
    total = np.zeros(grid.extents)
    for axis, (e, h) in enumerate(zip(grid.extents, grid.spacing)):
        theta = 2 * np.pi * np.fft.fftfreq(e)
        sym = -(stencil[0] + sum(2 * w * np.cos(off * theta) for off, w in stencil.items() if off))
        shape = [1] * grid.dims
        shape[axis] = e
        total = total + sym.reshape(shape) / h**2
    return total


def solve_poisson(grid: Grid, rhs: np.ndarray, order: int = 2) -> np.ndarray:
    """Solve ``-(1/4π) ∇²_δ V = rhs`` in the discrete sense.

    All-periodic grids use the discrete Fourier symbol of the stencil, so the result
    is exact up to round-off and gauge-fixed to zero mean; the source must be
    neutral.  Any Dirichlet axis makes the operator definite and conjugate
    gradients is used instead.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (grid.n_points,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({grid.n_points},)")
    if not np.any(rhs):
        return np.zeros_like(rhs)
    if grid.all_periodic:
        total = rhs.sum()
        if abs(total) > 1e-10 * grid.n_points * max(1.0, np.abs(rhs).max()):
            raise PoissonCompatibilityError(
                f"periodic Poisson source must be neutral, sum = {total:.3e}"
            )
        sym = _periodic_symbol(grid, order)
        rhat = np.fft.fftn(rhs.reshape(grid.extents))
        vhat = np.zeros_like(rhat)
        nz = sym > 1e-12 * sym.max()
        vhat[nz] = 4 * np.pi * rhat[nz] / sym[nz]
        v = np.fft.ifftn(vhat).real.ravel()
        return v - v.mean()

    op = laplacian(grid, order)
    op.data *= -1.0 / (4 * np.pi)
    v, info = spla.cg(op, rhs, rtol=1e-12, atol=0.0, maxiter=20 * grid.n_points)
    if info != 0:
        raise PoissonSolverError(f"conjugate gradients did not converge (info={info})")
    return v


def select_interpolation_points(grid: Grid) -> np.ndarray:
    """Fine-grid flat indices of the coarse subgrid, sorted ascending."""
    per_axis = [grid.coarse_axis_indices(a) for a in range(grid.dims)]
    mesh = np.meshgrid(*per_axis, indexing="ij")
    flat = np.ravel_multi_index(tuple(m.ravel() for m in mesh), grid.extents)
    return np.sort(flat)


def prolongate(coarse_values: np.ndarray, grid: Grid) -> np.ndarray:
    """Multilinear (tensor hat-function) interpolation from the coarse subgrid to every fine point."""
    coarse_values = np.asarray(coarse_values, dtype=float)
    shape = tuple(len(grid.coarse_axis_indices(a)) for a in range(grid.dims))
    if coarse_values.shape != (int(np.prod(shape)),):
        raise ValueError(
            f"expected {int(np.prod(shape))} coarse values, got shape {coarse_values.shape}"
        )
    field = coarse_values.reshape(shape)
    for axis in range(grid.dims):
        nodes = grid.coarse_axis_indices(axis).astype(float)
        fine = np.arange(grid.extents[axis], dtype=float)
        period = grid.extents[axis] if grid.bc[axis] == PERIODIC else None
        moved = np.moveaxis(field, axis, -1)
        out = np.empty(moved.shape[:-1] + (len(fine),))
        for pos in np.ndindex(moved.shape[:-1]):
            out[pos] = np.interp(fine, nodes, moved[pos], period=period)
        field = np.moveaxis(out, -1, axis)
    return field.ravel()


def restrict(fine_values: np.ndarray, grid: Grid) -> np.ndarray:
    """Injection onto the coarse subgrid (left inverse of :func:`prolongate`)."""
    return np.asarray(fine_values)[grid.coarse_indices]
