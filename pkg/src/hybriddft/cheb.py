"""Chebyshev approximation of the Fermi-Dirac matrix function.

The rescaled occupation function ``g(x) = 1 / (1 + C exp(β̂ x))`` on ``[-1, 1]`` is
interpolated at Chebyshev-Gauss points; error bounds come from the
Bernstein-ellipse estimate ``2 K r^-ℓ / (r - 1)`` with ``K = sup_{B_r} |g|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

ELLIPSE_SAMPLES = 256
DEFAULT_MAX_DEGREE = 100_000
ELLIPSE_FRACTION = 0.9


class DegreeOverflowError(ValueError):
    pass


def fermi_dirac(x, beta: float, mu: float):
    """``1 / (1 + exp(β (x - μ)))`` without overflow."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    t = beta * (np.asarray(x, dtype=float) - mu)
    return logistic_complement(t)


def logistic_complement(t):
    """``1 / (1 + e^t)`` for real or complex ``t``, stable for large ``Re t``."""
    t = np.asarray(t)
    out = np.empty(t.shape, dtype=np.result_type(t, float))
    pos = t.real > 0
    with np.errstate(under="ignore"):
        e = np.exp(-t[pos])
        out[pos] = e / (1.0 + e)
        out[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
    return out if out.ndim else out[()]


def rescaled_fermi(x, beta_hat: float, log_c: float):
    """``g(x) = 1 / (1 + C e^{β̂ x})`` with ``C = e^{log_c}``."""
    return logistic_complement(beta_hat * np.asarray(x) + log_c)


def bernstein_radius(beta_hat: float) -> tuple[float, float]:
    """Working ellipse parameter ``r`` and the pole-limited supremum ``r_max``.

    The nearest poles of ``g`` sit at imaginary distance ``π/β̂`` from the real
    axis, so ``r_max = (c + sqrt(c² + 4)) / 2`` with ``c = 2π/β̂``.
    """
    if beta_hat <= 0:
        return math.inf, math.inf
    c = 2 * math.pi / beta_hat
    r_max = 0.5 * (c + math.sqrt(c * c + 4))
    return 1 + ELLIPSE_FRACTION * (r_max - 1), r_max


def ellipse_sup(beta_hat: float, log_c: float, r: float, samples: int = ELLIPSE_SAMPLES) -> float:
    """Largest ``|g|`` over ``samples`` points on the boundary of the Bernstein ellipse ``B_r``."""
    theta = 2 * np.pi * np.arange(samples) / samples
    z = 0.5 * (r * np.exp(1j * theta) + np.exp(-1j * theta) / r)
    return float(np.max(np.abs(rescaled_fermi(z, beta_hat, log_c))))


def chebyshev_bound(k_sup: float, r: float, degree: int) -> float:
    if math.isinf(r):
        return 0.0
    return 2.0 * k_sup * r ** (-degree) / (r - 1)


def select_degree(
    beta_hat: float,
    eps_poly: float,
    log_c: float = 0.0,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> tuple[int, float]:
    """Smallest degree whose ellipse bound is at most ``eps_poly``; returns ``(degree, r)``."""
    if beta_hat <= 0:
        raise ValueError("beta_hat must be positive")
    if not 0 < eps_poly < 1:
        raise ValueError("eps_poly must lie in (0, 1)")
    r, _ = bernstein_radius(beta_hat)
    k_sup = ellipse_sup(beta_hat, log_c, r)
    degree = math.ceil(math.log(2 * k_sup / ((r - 1) * eps_poly)) / math.log(r))
    degree = max(degree, 1)
    # guard against rounding at the boundary
    while chebyshev_bound(k_sup, r, degree) > eps_poly:
        degree += 1
    if degree > max_degree:
        raise DegreeOverflowError(
            f"degree {degree} needed for eps_poly={eps_poly:g} exceeds the cap {max_degree}"
        )
    return degree, r


@dataclass(frozen=True)
class ChebyshevExpansion:
    coeffs: np.ndarray
    beta_hat: float
    log_c: float
    certified_bound: float
    ellipse_r: float

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def c(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_c))

    def __call__(self, x):
        return np.polynomial.chebyshev.chebval(x, self.coeffs)

    def target(self, x):
        return rescaled_fermi(x, self.beta_hat, self.log_c)


def chebyshev_interpolant(values_at_nodes: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients from samples at the first-kind points ``cos(π(k + 1/2)/(ℓ + 1))``."""
    n = len(values_at_nodes)
    coeffs = dct(values_at_nodes, type=2) / n
    coeffs[0] /= 2
    return coeffs


def chebyshev_nodes(degree: int) -> np.ndarray:
    n = degree + 1
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)


def cheb_coefficients(beta_hat: float, log_c: float, degree: int) -> ChebyshevExpansion:
    """Degree-``ℓ`` interpolant of ``g`` with its certified sup-norm error bound."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    coeffs = chebyshev_interpolant(rescaled_fermi(chebyshev_nodes(degree), beta_hat, log_c))
    if beta_hat == 0:
        coeffs[1:] = 0.0
        return ChebyshevExpansion(coeffs, 0.0, log_c, 0.0, math.inf)
    r, _ = bernstein_radius(beta_hat)
    bound = chebyshev_bound(ellipse_sup(beta_hat, log_c, r), r, degree) + rounding_bound(coeffs)
    return ChebyshevExpansion(coeffs, beta_hat, log_c, bound, r)


def rounding_bound(coeffs: np.ndarray) -> float:
    """Floating-point error allowance for evaluating the series, ``(ℓ+1) u Σ|a_k|``."""
    return len(coeffs) * np.finfo(float).eps * float(np.abs(coeffs).sum())


def measured_error(expansion: ChebyshevExpansion, samples: int = 10_000) -> float:
    x = np.linspace(-1, 1, samples)
    return float(np.max(np.abs(expansion(x) - expansion.target(x))))


def apply_matrix_poly(mat, coeffs, v: np.ndarray) -> np.ndarray:
    """``p(H̃) v`` by the three-term recurrence, using ``len(coeffs) - 1`` products with ``H̃``.

    ``v`` may be a vector or a block of column vectors.  ``coeffs`` is either a
    coefficient array or a :class:`ChebyshevExpansion`.
    """
    if isinstance(coeffs, ChebyshevExpansion):
        coeffs = coeffs.coeffs
    coeffs = np.asarray(coeffs, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape[0] != mat.shape[1]:
        raise ValueError(f"vector length {v.shape[0]} does not match matrix size {mat.shape[1]}")
    t_prev = v
    out = coeffs[0] * t_prev
    if len(coeffs) == 1:
        return out
    t_cur = mat @ v
    out = out + coeffs[1] * t_cur
    for a_k in coeffs[2:]:
        t_prev, t_cur = t_cur, 2.0 * (mat @ t_cur) - t_prev
        out += a_k * t_cur
    return out
