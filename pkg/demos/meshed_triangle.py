"""Four-bus meshed grid with triangular injection regions.

Every PQ bus may consume or produce inside a triangle that widens with
kappa. Lines are 5 - 3.6j p.u., voltages must stay in [0.95, 1.05] and
branch currents below 0.6. The certified kappa is checked against a
direct load-flow sweep along the all-consume corner.
"""
import numpy as np

from gridcert import pipeline
from gridcert.constraints import SecuritySpec, strictly_inside, combine, security_forms
from gridcert.grid import BranchSpec, build_grid
from gridcert.loadflow import high_voltage_solution, is_nonsingular
from gridcert.uncertainty import KappaTemplate

Y = 5 - 3.6j
model = build_grid(
    [BranchSpec(0, 1, Y), BranchSpec(1, 2, Y), BranchSpec(2, 3, Y), BranchSpec(3, 0, Y), BranchSpec(1, 3, Y)],
    n_pq=3,
)
security = SecuritySpec.uniform(model, 0.95, 1.05, 0.6)

# triangle with vertices 0, -kappa and -kappa*j; each row (alpha, beta, gamma0, gamma1)
# reads alpha Re s + beta Im s <= gamma0 + kappa gamma1
tri = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [-1.0, -1.0, 0.0, 1.0]])
template = KappaTemplate((tri, tri, tri))

res = pipeline.max_kappa(model, security, model.w, template, pipeline.KappaSearch(resolution=0.02, kappa_max=1.0))
print(f"certified kappa: {res.kappa_star:.2f}  bracket {res.bracket}")
for k, v in sorted(res.verdicts.items()):
    print(f"  kappa {k:.2f}: {v.result} {v.failure or ''}")

# how far the real-load corner can actually go before a bound breaks
plain = security_forms(model, security)
last = None
for k in np.arange(0.02, 1.0, 0.01):
    try:
        v = high_voltage_solution(model, np.full(3, -k + 0j))
    except Exception:
        break
    if not (strictly_inside(plain, v) and is_nonsingular(model, v)[0]):
        break
    last = k
print(f"corner sweep keeps every bound up to kappa = {last:.2f}; min |v| there {np.abs(high_voltage_solution(model, np.full(3, -last + 0j))).min():.4f}")
