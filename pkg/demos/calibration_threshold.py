"""Where the nodal current cap calibration stops on the two-bus grid.

The P1 family for this grid is feasible exactly when the circle
v = 1 + lam e^{it} holds a point with |v| <= |Re(v-1)| + |Im(v-1)|.
A brute-force sweep over the circle gives the true switch-over value,
which the step schedule reproduces to its resolution. The decoupled bound
1/(1+sqrt 2) is only sufficient: it ignores that both coordinates of v
cannot move against |v| at once.
"""
import numpy as np
from scipy.optimize import brentq

from gridcert import grids
from gridcert.constraints import SecuritySpec
from gridcert.vset import LambdaSchedule, calibrate_lambda

t = np.linspace(0.0, 2 * np.pi, 400_001)


def gap(lam):
    u = lam * np.exp(1j * t)
    return np.max(np.abs(u.real) + np.abs(u.imag) - np.abs(1 + u))


threshold = brentq(gap, 0.1, 0.9, xtol=1e-10)
model = grids.two_bus()
security = SecuritySpec.uniform(model, 0.9, 1.1, 10.0)
for step in (0.1, 0.01):
    cal = calibrate_lambda(model, security, schedule=LambdaSchedule.step_mode(step, step))
    print(f"step {step:<5}: lambda* = {cal.lambda_star:.2f}")
print(f"brute-force threshold   {threshold:.5f}")
print(f"decoupled bound         {1 / (1 + np.sqrt(2)):.5f}")
