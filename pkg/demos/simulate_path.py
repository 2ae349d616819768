"""Run one penalized path and look at what the penalty does.

Starts from a profile that dips below zero, integrates for a few relaxation
times and prints the average (conserved exactly), the running minimum and the
accumulated penalty mass.
"""

import numpy as np

from reflectch.solver import SolverConfig, solve_path
from reflectch.spectral import Field

n_modes = 32
x0 = Field(np.r_[0.5, 1.2, -0.4, np.zeros(n_modes - 2)])
for eps in (0.3, 0.03):
    cfg = SolverConfig(n_modes=n_modes, T=0.1, eps=eps, c=x0.average, dt=1e-4, seed=1)
    traj = solve_path(x0, cfg)
    vals = traj.values()
    print(f"eps = {eps}")
    for t in (0.0, 0.001, 0.01, 0.1):
        k = traj.index_of_time(t)
        print(f"  t = {t:<6} average = {traj.coeffs[k, 0]:.12f}  min = {vals[k].min():+.4f}")
    print(f"  penalty mass = {traj.eta_mass:.4f}  contact integral = {traj.contact_per_step.sum():+.5f}")
