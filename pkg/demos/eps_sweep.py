"""Stationary penalty statistics as eps shrinks.

Prints the penalty mass rate, the contact integral rate and the fraction of
negative grid values for a short sweep at a reduced ensemble size.
"""

from reflectch.reflection import StationaryRun, eps_sweep

run = StationaryRun(n_modes=32, n_replicas=400)
res = eps_sweep(1.0, (0.3, 0.1, 0.03), run, seed=3, compare_limit=False)
print("eps     eta rate            contact rate          negative fraction")
for e, m, c, f in zip(res.eps, res.eta_mass_rate, res.contact_rate, res.negative_fraction):
    print(f"{e:<7} {m.mean:.4f} +- {m.stderr:.4f}   {c.mean:+.5f} +- {c.stderr:.5f}   {f.mean:.4f}")
print("log-log slopes of the eta rate:", [round(s, 3) for s in res.checks()["eta_mass_loglog_slopes"]])
