"""
Damping threshold and randomized block updates
===============================================

A two-atom cell of a jittered chain.  The Jacobian of the noiseless map at the
fixed point predicts the largest stable damping for full-coordinate mixing.
Updating a few random coordinates per step tolerates damping close to one.
"""

# %%
import numpy as np

from hybriddft.oracle import ground_truth, optimal_damping
from hybriddft.qest import BornShots
from hybriddft.scf import ScfConfig, jacobian_fd, run_scf, stability_threshold
from hybriddft.toymodels import make_chain

system = make_chain(2, 8.0, 32, beta=20.0, charges=[1.0, 1.0], width=0.7, stride=1, jitter=0.3, seed=1)
n_star, mu_star = ground_truth(system, constrained=True)
jac = jacobian_fd(system, n_star, mu=mu_star, cfg=ScfConfig(mu=mu_star))
lam = np.linalg.eigvals(jac).real
print(f"{system.n_coarse} coordinates, Jacobian eigenvalues in [{lam.min():.2f}, {lam.max():.2f}]")
print(f"optimal damping {optimal_damping(jac):.3f}, threshold {stability_threshold(jac):.3f}")

# %%
# Full-coordinate mixing across the threshold, noiseless.
for a in (0.10, 0.20, 0.24, 0.26, 0.30):
    tr = run_scf(ScfConfig(damping=a, mu=mu_star, tol=1e-6), system, reference=n_star)
    print(f"FCFP a = {a:.2f}: {tr.status:9s} after {tr.iterations} iterations")

# %%
# Shot noise; cost counted in coordinate evaluations to reach 1e-4.
noise = BornShots(10**10, seed=0)
runs = {
    "FCFP a*": ScfConfig(damping=optimal_damping(jac), mu=mu_star, tol=1e-4, noise=noise),
    "FCFP 0.95": ScfConfig(damping=0.95, mu=mu_star, tol=1e-4, noise=noise),
    "RBCFP m=4, 0.95": ScfConfig(mode="rbcfp", block_size=4, damping=0.95, mu=mu_star, tol=1e-4, noise=noise),
}
for label, cfg in runs.items():
    tr = run_scf(cfg, system, reference=n_star)
    print(f"{label:16s}: {tr.status:9s} evaluations {tr.records[-1].evaluations}")
