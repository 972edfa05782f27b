"""Two-bus walkthrough: calibrate the voltage set, certify a few regions,
then search the largest load box and compare with the nose of the PV curve.

Run with ``python3 demos/two_bus_walkthrough.py``.
"""
import numpy as np

from gridcert import grids, pipeline
from gridcert.constraints import SecuritySpec
from gridcert.loadflow import eval_F, high_voltage_solution
from gridcert.uncertainty import KappaTemplate, UncertaintySet
from gridcert.vset import assemble_v, calibrate_lambda

model = grids.two_bus()  # slack at 1.0, one PQ bus, line admittance 1
security = SecuritySpec.uniform(model, 0.9, 1.1, 10.0)

cal = calibrate_lambda(model, security)
print(f"nodal current cap: {cal.lambda_star:.3f} after {len(cal.trace)} schedule steps ({cal.stop_reason})")
cs = assemble_v(model, security, cal.aux)
print(f"voltage set: {len(cs)} quadratic constraints, {cs.n_aux} of them auxiliary")

regions = {
    "no injection": UncertaintySet.singleton([0.0]),
    "load box 0.05": UncertaintySet.box([-0.05 - 0.05j], [0.0]),
    "load box 0.30": UncertaintySet.box([-0.3], [0.0]),
}
for name, uset in regions.items():
    v = pipeline.test_admissibility(model, security, model.w, uset)
    tail = "" if v.admissible else f"  failure={v.failure} open={v.not_excluded}"
    print(f"{name:>14}: {v.result}{tail}")

# the load that pulls the high-voltage branch down to vmin
s_edge = eval_F(model, np.array([0.9]))[0]
print(f"analytic edge: s = {s_edge.real:.4f}; v there = {abs(high_voltage_solution(model, np.array([s_edge]))[0]):.4f}")

res = pipeline.max_kappa(model, security, model.w, KappaTemplate.box([-1.0], [0.0], [0.0], [0.0]),
                         pipeline.KappaSearch(resolution=0.01, kappa_max=1.0))
print(f"largest certified real load: {res.kappa_star:.2f} (bracket {res.bracket})")
