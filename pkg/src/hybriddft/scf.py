"""Full-coordinate (FCFP) and randomized block-coordinate (RBCFP) fixed-point iterations.

A *system* is any object providing ``n_coarse``, ``initial_density()``,
``initial_mu(n)``, ``electron_count(n)``, ``n_electrons``, ``estimate(n, mu,
indices, cfg, meter, iteration)``, ``exact_map(n, mu, cfg)`` and
``dense_map(n, mu)`` (see :mod:`hybriddft.toymodels`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cheb import DegreeOverflowError
from .qest import BornShots, BoundedNoise, Exact, NoiseModel, QueryMeter

MODES = ("fcfp", "rbcfp")
MU_MODES = ("fixed", "constrained")
STATUSES = ("converged", "diverged", "max_iter")


class ScfNumericalError(FloatingPointError):
    """Raised when an estimate comes back NaN or infinite."""


@dataclass(frozen=True)
class ScfConfig:
    mode: str = "fcfp"
    damping: float = 0.3
    block_size: int | None = None
    mu_mode: str = "fixed"
    mu: float | None = None
    eta: float = 0.1
    n_electrons: float | None = None
    tol: float = 1e-6
    max_iter: int = 1000
    eps_poly: float = 1e-8
    degree: int | None = None
    bounds_method: str = "gershgorin"
    noise: NoiseModel = field(default_factory=Exact)
    seed: int = 0
    divergence_limit: float = 1e6
    divergence_growth: float = 4.0
    growth_floor: float = 0.1
    stall_window: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mu_mode not in MU_MODES:
            raise ValueError(f"mu_mode must be one of {MU_MODES}, got {self.mu_mode!r}")
        # a = 0 is allowed at this level (the no-op step); drivers reject it
        if not 0 <= self.damping <= 1:
            raise ValueError("damping must lie in [0, 1]")
        if self.block_size is not None and self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.eps_poly < 1:
            raise ValueError("eps_poly must lie in (0, 1)")
        if self.degree is not None and self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if not self.divergence_growth > 1:
            raise ValueError("divergence_growth must exceed 1")
        if self.stall_window < 0:
            raise ValueError("stall_window must be >= 0")
        if not self.growth_floor > 0:
            raise ValueError("growth_floor must be positive")
        if self.bounds_method not in ("gershgorin", "lanczos"):
            raise ValueError("bounds_method must be 'gershgorin' or 'lanczos'")

    def with_noise(self, noise: NoiseModel) -> ScfConfig:
        return replace(self, noise=noise)


@dataclass
class ScfState:
    n: np.ndarray
    mu: float
    k: int = 0
    evaluations: int = 0
    clip_count: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def start(cls, n0, mu0: float, seed: int = 0) -> ScfState:
        return cls(np.asarray(n0, dtype=float).copy(), float(mu0), rng=np.random.default_rng(seed))


@dataclass(frozen=True)
class TraceRecord:
    k: int
    evaluations: int
    error: float
    error_abs: float
    error_w: float
    mu: float
    g: float
    queries: int
    clips: int


TRACE_COLUMNS = tuple(f.name for f in fields(TraceRecord))


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord]
    status: str
    n: np.ndarray
    mu: float
    meter: QueryMeter
    stopping: str
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def weighted_norm(x, w) -> float:
    """``sqrt(Σ w_j |x_j|²)``."""
    x = np.asarray(x)
    w = np.asarray(w, dtype=float)
    if w.shape != x.shape:
        raise ValueError("weights and vector differ in shape")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w):
        raise ValueError("weights must not all vanish")
    return float(np.sqrt(np.sum(w * np.abs(x) ** 2)))


def target_electrons(cfg: ScfConfig, system) -> float:
    return system.n_electrons if cfg.n_electrons is None else cfg.n_electrons


def electron_residual(system, n, n_electrons: float) -> float:
    """``Ĝ(n) = Σ |n| δ^d - N_e`` on the prolongated density."""
    return system.electron_count(n) - n_electrons


def mu_step(state: ScfState, cfg: ScfConfig, system) -> float:
    """Robbins-Monro update ``μ - η Ĝ(n)`` using the state's (already updated) density."""
    g = electron_residual(system, state.n, target_electrons(cfg, system))
    mu = state.mu - cfg.eta * g
    if not math.isfinite(mu):
        raise ScfNumericalError("chemical potential became non-finite")
    return mu


def _update(state: ScfState, cfg: ScfConfig, system, indices: np.ndarray, meter) -> ScfState:
    est = system.estimate(state.n, state.mu, indices, cfg, meter, state.k)
    if not np.all(np.isfinite(est)):
        raise ScfNumericalError(f"non-finite density estimate at iteration {state.k}")
    a = cfg.damping
    n = state.n.copy()
    n[indices] = (1 - a) * state.n[indices] + a * est
    neg = n < 0 if getattr(system, "nonnegative", True) else np.zeros(len(n), dtype=bool)
    clips = int(neg.sum())
    n[neg] = 0.0
    new = ScfState(n, state.mu, state.k + 1, state.evaluations + len(indices), state.clip_count + clips, state.rng)
    if cfg.mu_mode == "constrained":
        new.mu = mu_step(new, cfg, system)
    return new


def fcfp_step(state: ScfState, cfg: ScfConfig, system, meter: QueryMeter | None = None) -> ScfState:
    """``n ← (1-a) n + a F̂(n)`` on every coordinate."""
    return _update(state, cfg, system, np.arange(len(state.n)), meter)


def sample_block(rng: np.random.Generator, n_coords: int, m: int) -> np.ndarray:
    """``m`` distinct indices drawn uniformly without replacement, sorted."""
    if not 1 <= m <= n_coords:
        raise ValueError(f"block size {m} outside [1, {n_coords}]")
    return np.sort(rng.choice(n_coords, size=m, replace=False))


def rbcfp_step(state: ScfState, cfg: ScfConfig, system, meter: QueryMeter | None = None) -> ScfState:
    """Mixing update on ``m`` random coordinates; the rest are copied unchanged."""
    m = cfg.block_size if cfg.block_size is not None else len(state.n)
    return _update(state, cfg, system, sample_block(state.rng, len(state.n), m), meter)


def jacobian_fd(
    system,
    n_ref,
    h: float = 1e-4,
    mu: float | None = None,
    dense: bool = False,
    constrained: bool = False,
    cfg: ScfConfig | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of the noiseless map at ``n_ref``.

    ``dense=True`` differentiates the diagonalisation-based map; otherwise the
    Chebyshev map with the Exact estimator is used.  In constrained mode the
    chemical potential is re-solved for every perturbed density (dense only).
    """
    if not h > 0:
        raise ValueError("h must be positive")
    n_ref = np.asarray(n_ref, dtype=float)
    if constrained and not dense:
        raise ValueError("the constrained Jacobian requires the dense map")
    cfg = ScfConfig() if cfg is None else cfg.with_noise(Exact())
    if mu is None and not constrained:
        mu = system.initial_mu(n_ref)

    def fmap(x):
        if constrained:
            return system.dense_map(x, system.dense_constrained_mu(x))
        if dense:
            return system.dense_map(x, mu)
        return system.exact_map(x, mu, cfg)

    size = len(n_ref)
    jac = np.empty((size, size))
    for j in range(size):
        step = np.zeros(size)
        step[j] = h
        jac[:, j] = (fmap(n_ref + step) - fmap(n_ref - step)) / (2 * h)
    if not np.all(np.isfinite(jac)):
        raise ScfNumericalError("finite-difference Jacobian has non-finite entries")
    return jac


def damped_spectral_radius(jac: np.ndarray, damping: float) -> float:
    lam = np.linalg.eigvals(jac)
    return float(np.max(np.abs(1 - damping + damping * lam)))


def stability_threshold(jac: np.ndarray) -> float:
    """Largest damping with ``ρ((1-a)I + aJ) < 1``, from the real Jacobian spectrum."""
    lam = np.linalg.eigvals(jac)
    if np.max(lam.real) >= 1:
        return 0.0
    # |1 - a(1 - λ)| < 1  ⇔  a < 2 Re(1-λ) / |1-λ|²
    z = 1 - lam
    return float(min(1.0, np.min(2 * z.real / np.abs(z) ** 2)))


def run_scf(
    cfg: ScfConfig,
    system,
    reference=None,
    n0=None,
    weights=None,
    meter: QueryMeter | None = None,
) -> ConvergenceTrace:
    """Iterate FCFP or RBCFP until the relative error drops below ``cfg.tol``.

    The error is ``‖n_k - n_*‖ / ‖n_*‖`` when a reference ``n_*`` is given and
    ``‖n_k - n_{k-1}‖ / max(‖n_{k-1}‖, ‖n_k‖)`` otherwise.  A run stops with status
    ``diverged`` when its error turns non-finite, exceeds ``cfg.divergence_limit``,
    or exceeds ``cfg.divergence_growth`` times the starting error (floored at
    ``cfg.growth_floor``), or when the Hamiltonian's spectrum widens past what
    the degree cap can resolve.  The growth test catches divergence of
    bounded maps, whose iterates saturate instead of blowing up.  Noiseless
    runs also stop as ``diverged`` when no new error minimum appears within
    ``cfg.stall_window`` iterations: the fixed point repels and the iterates
    have settled on a cycle.  Noisy runs are exempt, since a plateau at the
    noise floor is expected there.
    """
    if cfg.damping <= 0:
        raise ValueError("damping must lie in (0, 1]")
    n_coords = system.n_coarse
    if cfg.mode == "rbcfp" and cfg.block_size is not None and cfg.block_size > n_coords:
        raise ValueError(f"block size {cfg.block_size} exceeds the {n_coords} coordinates")
    if weights is not None:
        weighted_norm(np.zeros(n_coords), weights)
    n_start = system.initial_density() if n0 is None else np.asarray(n0, dtype=float)
    mu0 = cfg.mu if cfg.mu is not None else system.initial_mu(n_start)
    meter = QueryMeter() if meter is None else meter
    n_e = target_electrons(cfg, system) if hasattr(system, "n_electrons") else None
    ref = None if reference is None else np.asarray(reference, dtype=float)
    ref_norm = None if ref is None else max(np.linalg.norm(ref), 1e-300)

    step = fcfp_step if cfg.mode == "fcfp" else rbcfp_step
    state = ScfState.start(n_start, mu0, cfg.seed)
    records: list[TraceRecord] = []
    status, reason = "max_iter", ""
    growth_cap = math.inf
    best, best_k = math.inf, 0
    watch_stall = cfg.stall_window > 0 and isinstance(cfg.noise, Exact)
    if ref is not None:
        growth_cap = cfg.divergence_growth * max(np.linalg.norm(n_start - ref) / ref_norm, cfg.growth_floor)
    for _ in range(cfg.max_iter):
        meter.next_iteration()
        prev = state.n
        try:
            state = step(state, cfg, system, meter)
        except DegreeOverflowError as exc:
            if not records:
                raise
            status, reason = "diverged", str(exc)
            break
        if ref is not None:
            diff = state.n - ref
            err_abs = float(np.linalg.norm(diff))
            err = err_abs / ref_norm
        else:
            diff = state.n - prev
            err_abs = float(np.linalg.norm(diff))
            err = err_abs / max(np.linalg.norm(prev), np.linalg.norm(state.n), 1e-300)
        err_w = weighted_norm(diff, weights) if weights is not None else math.nan
        g = electron_residual(system, state.n, n_e) if n_e is not None else math.nan
        records.append(
            TraceRecord(state.k, state.evaluations, err, err_abs, err_w, state.mu, g, meter.total, state.clip_count)
        )
        if ref is None and len(records) == 1:
            growth_cap = cfg.divergence_growth * max(err, cfg.growth_floor)
        if not math.isfinite(err) or err > cfg.divergence_limit:
            status, reason = "diverged", "error above the divergence limit"
            break
        if err > growth_cap:
            status, reason = "diverged", "error grew past the starting error"
            break
        if err < cfg.tol:
            status = "converged"
            break
        if err < best:
            best, best_k = err, len(records)
        elif watch_stall and len(records) - best_k >= cfg.stall_window:
            status, reason = "diverged", f"no progress in {cfg.stall_window} iterations"
            break
    stopping = "reference" if ref is not None else "successive"
    return ConvergenceTrace(records, status, state.n, state.mu, meter, stopping, reason)


def noise_label(noise: NoiseModel) -> str:
    if isinstance(noise, BornShots):
        return f"born(shots={noise.shots})"
    if isinstance(noise, BoundedNoise):
        return f"bounded(eps={noise.eps:g},delta={noise.delta_fail:g})"
    return "exact"
