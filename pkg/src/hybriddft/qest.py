"""Simulated measurement of density-matrix diagonals ``tr(ρ_j p_ℓ(H̃))``.

Three noise models are available.  ``Exact`` returns the Chebyshev diagonal
itself.  ``BornShots`` draws projective measurements in the eigenbasis of
``H̃``: outcome ``ξ`` occurs with probability ``|U_jξ|²`` and records
``p_ℓ(λ̃_ξ)``.  ``BoundedNoise`` mimics amplitude estimation: an error uniform on
``[-ε, ε]`` with probability ``1 - δ`` and uniform on ``[-α, α]`` otherwise.

Every estimate draws from its own generator seeded by ``(seed, iteration,
index)``, so results do not depend on the order in which coordinates are
visited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .cheb import ChebyshevExpansion, apply_matrix_poly


@dataclass(frozen=True)
class Exact:
    seed: int = 0


@dataclass(frozen=True)
class BornShots:
    shots: int
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


@dataclass(frozen=True)
class BoundedNoise:
    eps: float
    delta_fail: float
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta_fail < 1:
            raise ValueError("delta_fail must lie in (0, 1)")


NoiseModel = Union[Exact, BornShots, BoundedNoise]


@dataclass
class QueryMeter:
    """Running count of simulated oracle queries, split by SCF iteration."""

    total: int = 0
    per_iteration: list[int] = field(default_factory=list)

    def next_iteration(self) -> None:
        self.per_iteration.append(0)

    def add(self, queries: int) -> None:
        if queries < 0:
            raise ValueError("query counts are nonnegative")
        if not self.per_iteration:
            self.per_iteration.append(0)
        self.total += queries
        self.per_iteration[-1] += queries


def repetitions(model: NoiseModel, alpha: float = 1.0) -> int:
    """Circuit repetitions per coordinate: 1, ``N_s`` or ``ceil((α/ε) ln(1/δ))``."""
    if isinstance(model, Exact):
        return 1
    if isinstance(model, BornShots):
        return model.shots
    return math.ceil(alpha / model.eps * math.log(1.0 / model.delta_fail))


def queries_per_coordinate(model: NoiseModel, degree: int, certified_bound: float = 0.0) -> int:
    return max(degree, 1) * repetitions(model, 1.0 + certified_bound)


def lane_rng(seed: int, iteration: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, index])


def exact_diag(h_tilde, expansion: ChebyshevExpansion, sites) -> np.ndarray:
    """``e_j^T p_ℓ(H̃) e_j`` for each fine-grid site ``j`` (scalar in, scalar out)."""
    scalar = np.isscalar(sites)
    sites = np.atleast_1d(np.asarray(sites, dtype=np.int64))
    n = h_tilde.shape[0]
    if np.any(sites < 0) or np.any(sites >= n):
        raise IndexError(f"site index out of range for a {n}x{n} matrix")
    block = np.zeros((n, len(sites)))
    block[sites, np.arange(len(sites))] = 1.0
    out = apply_matrix_poly(h_tilde, expansion, block)[sites, np.arange(len(sites))]
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class Eigensystem:
    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, h_tilde) -> Eigensystem:
        dense = h_tilde.toarray() if hasattr(h_tilde, "toarray") else np.asarray(h_tilde)
        w, u = np.linalg.eigh(dense)
        return cls(w, u)


def born_weights(eig: Eigensystem, site: int) -> np.ndarray:
    w = eig.vectors[site] ** 2
    return w / w.sum()


def born_outcomes(eig: Eigensystem, expansion) -> np.ndarray:
    """Measurement outcome ``p_ℓ(λ)`` attached to each eigenvector."""
    if callable(expansion):
        return expansion(eig.values)
    return np.polynomial.chebyshev.chebval(eig.values, expansion)


def born_sample(
    eig: Eigensystem | None, expansion, site: int, shots: int, rng, outcomes: np.ndarray | None = None
) -> float:
    """Average of ``shots`` projective measurements of ``p_ℓ(H̃)`` on ``|r_j⟩``."""
    if eig is None:
        raise ValueError("Born sampling needs the eigensystem of the rescaled Hamiltonian")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if outcomes is None:
        outcomes = born_outcomes(eig, expansion)
    counts = rng.multinomial(shots, born_weights(eig, site))
    return float(counts @ outcomes / shots)


def bounded_noise_estimate(true_value: float, model: BoundedNoise, rng, alpha: float = 1.0) -> float:
    if rng.random() < model.delta_fail:
        return true_value + rng.uniform(-alpha, alpha)
    return true_value + rng.uniform(-model.eps, model.eps)


def estimate_density(
    h_tilde,
    expansion: ChebyshevExpansion,
    sites,
    model: NoiseModel,
    meter: QueryMeter | None = None,
    iteration: int = 0,
    eigensystem: Eigensystem | None = None,
    lanes=None,
) -> np.ndarray:
    """Noisy estimates of the diagonals of ``p_ℓ(H̃)`` at ``sites``.

    ``lanes`` labels each site for random-stream derivation (defaults to the
    site indices themselves).  Negative estimates are passed through unchanged.
    """
    sites = np.asarray(sites, dtype=np.int64)
    if len(np.unique(sites)) != len(sites):
        raise ValueError("sites must be distinct")
    lanes = sites if lanes is None else np.asarray(lanes, dtype=np.int64)
    if meter is not None:
        meter.add(len(sites) * queries_per_coordinate(model, expansion.degree, expansion.certified_bound))

    if isinstance(model, BornShots):
        eig = eigensystem if eigensystem is not None else Eigensystem.of(h_tilde)
        outcomes = born_outcomes(eig, expansion)
        return np.array(
            [
                born_sample(eig, expansion, s, model.shots, lane_rng(model.seed, iteration, lane), outcomes)
                for s, lane in zip(sites, lanes)
            ]
        )
    values = exact_diag(h_tilde, expansion, sites)
    if isinstance(model, BoundedNoise):
        alpha = 1.0 + expansion.certified_bound
        values = np.array(
            [
                bounded_noise_estimate(v, model, lane_rng(model.seed, iteration, lane), alpha)
                for v, lane in zip(values, lanes)
            ]
        )
    return values
