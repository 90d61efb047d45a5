"""
Tracking the chemical potential
================================

With the electron count imposed, the chemical potential follows a stochastic
approximation update after every density step.  The residual of the particle
count is recorded alongside mu.
"""

# %%
from hybriddft.oracle import ground_truth
from hybriddft.scf import ScfConfig, run_scf
from hybriddft.toymodels import make_chain

system = make_chain(2, 8.0, 32, beta=20.0, charges=[1.0, 1.0], width=0.7, stride=1, jitter=0.3, seed=1)
n_star, mu_star = ground_truth(system, constrained=True)
print(f"reference mu = {mu_star:.6f}")

# %%
cfg = ScfConfig(mu_mode="constrained", damping=0.2, eta=0.1, tol=1e-6)
tr = run_scf(cfg, system, reference=n_star)
mu, g = tr.column("mu"), tr.column("g")
for k in list(range(0, tr.iterations, 20)) + [tr.iterations - 1]:
    print(f"k = {k + 1:4d}  mu = {mu[k]: .6f}  G = {g[k]: .2e}  error = {tr.records[k].error:.2e}")
print(f"{tr.status} with mu = {tr.mu:.6f}")
