"""
Density from a Chebyshev expansion of the Fermi-Dirac function
===============================================================

Build an eight-atom periodic chain, rescale its Kohn-Sham Hamiltonian into
[-1, 1] and compare polynomial densities of growing degree with the dense
eigendecomposition.  Then replace the exact diagonal by shot-noise estimates.
"""

# %%
import numpy as np

from hybriddft.cheb import cheb_coefficients, select_degree
from hybriddft.hamiltonian import rescale, spectral_bounds
from hybriddft.oracle import dense_fermi_diag
from hybriddft.qest import BornShots, BoundedNoise, QueryMeter, estimate_density, exact_diag
from hybriddft.toymodels import make_chain

system = make_chain(8, 32.0, 256, beta=10.0, stride=4)
n0 = system.initial_density()
mu = system.initial_mu(n0)
h = system.hamiltonian(n0)
print(f"{h.shape[0]} grid points, {system.n_coarse} interpolation points, mu0 = {mu:.4f}")

# %%
# Gershgorin discs give the interval; beta_hat and C absorb the shift and scale.
bounds = spectral_bounds(h)
resc = rescale(h, bounds, system.beta, mu)
print(f"spectrum in [{bounds.lower:.2f}, {bounds.upper:.2f}], beta_hat = {resc.beta_hat:.1f}, log C = {resc.log_c:.2f}")

# %%
# Error against the dense oracle next to the certified bound.
dense = dense_fermi_diag(h, system.beta, mu)[system.sites]
for degree in (25, 50, 100, 200, 500):
    exp = cheb_coefficients(resc.beta_hat, resc.log_c, degree)
    err = np.max(np.abs(exact_diag(resc.matrix, exp, system.sites) - dense))
    print(f"degree {degree:4d}: max error {err:.2e}  certified {exp.certified_bound:.2e}")

degree, _ = select_degree(resc.beta_hat, 1e-6, resc.log_c)
print(f"degree for 1e-6: {degree}")

# %%
# Noisy estimates: projective measurements and an amplitude-estimation style oracle.
exp = cheb_coefficients(resc.beta_hat, resc.log_c, degree)
exact = exact_diag(resc.matrix, exp, system.sites)
for model in (BornShots(1_000), BornShots(100_000), BoundedNoise(1e-3, 1e-2)):
    meter = QueryMeter()
    est = estimate_density(resc.matrix, exp, system.sites, model, meter)
    print(f"{model}: rms error {np.sqrt(np.mean((est - exact) ** 2)):.1e}, queries {meter.total:.3e}")
