"""Calibration of the auxiliary current caps and assembly of the voltage set.

The auxiliary set bounds every directed branch current and every nodal
current. It is convex by construction; it is certified non-singular when a
family of small second-order cone programs (one per bus pair and sign
quadrant) is infeasible. The nodal caps are scaled up by ``lam`` until that
certificate breaks, and the previous value is kept.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .constraints import (
    AuxBounds,
    ConstraintSet,
    SecuritySpec,
    aux_forms,
    combine,
    complex_row_to_real,
    security_forms,
)
from .errors import CalibrationFailed, InputError
from .grid import GridModel

DEFAULT_START = 0.1
DEFAULT_RATIO = 1.2
DEFAULT_CAP = 1.0


@dataclass(frozen=True)
class LambdaSchedule:
    """Increasing scale factors: geometric (``ratio``) or arithmetic (``step``)."""

    start: float = DEFAULT_START
    ratio: float | None = DEFAULT_RATIO
    step: float | None = None
    cap: float = DEFAULT_CAP  # largest admissible nodal cap in p.u.

    def __post_init__(self):
        if self.start <= 0:
            raise InputError("lambda schedule: start must be positive")
        if (self.ratio is None) == (self.step is None):
            raise InputError("lambda schedule: give exactly one of ratio or step")
        if self.ratio is not None and self.ratio <= 1:
            raise InputError("lambda schedule: ratio must exceed 1")
        if self.step is not None and self.step <= 0:
            raise InputError("lambda schedule: step must be positive")

    @classmethod
    def ratio_mode(cls, start=DEFAULT_START, ratio=DEFAULT_RATIO, cap=DEFAULT_CAP):
        return cls(start, ratio, None, cap)

    @classmethod
    def step_mode(cls, start, step, cap=DEFAULT_CAP):
        return cls(start, None, step, cap)

    def value(self, k: int) -> float:
        if self.ratio is not None:
            return self.start * self.ratio**k
        # rounding keeps 0.1 + 3 * 0.1 from drifting to 0.40000000000000002
        return round(self.start + k * self.step, 12)

    def describe(self) -> dict:
        mode = {"ratio": self.ratio} if self.ratio is not None else {"step": self.step}
        return {"start": self.start, **mode, "cap": self.cap}


@dataclass(frozen=True)
class P1Instance:
    m: int
    n: int
    psi: int
    phi: int
    problem: conic.ConicProblem = field(repr=False, compare=False)


def _aux_cones(builder: conic.ConicProblemBuilder, model: GridModel, aux: AuxBounds):
    n_var = builder.n_var
    for row, bound in zip(model.branch_rows, aux.i_branch):
        a, b = complex_row_to_real(row.c)
        off = complex(row.a * model.v0)
        builder.add_affine_cone(conic.SecondOrder(3), np.vstack([np.zeros(n_var), a, b]), [bound, off.real, off.imag])
    for j, bound in enumerate(aux.i_node):
        r = model.Y_LL[j]
        a, b = complex_row_to_real(r)
        off = -complex(r @ model.w)
        builder.add_affine_cone(conic.SecondOrder(3), np.vstack([np.zeros(n_var), a, b]), [bound, off.real, off.imag])


def formulate_p1(model: GridModel, aux: AuxBounds, m: int, n: int, psi: int, phi: int) -> P1Instance:
    """SOCP whose infeasibility excludes the singularity condition for the pair ``(m, n)``.

    Buses are 1-based; ``psi`` and ``phi`` pick the sign quadrant of the
    nodal current ``u`` at bus ``n``.
    """
    if psi not in (1, -1) or phi not in (1, -1):
        raise ValueError("psi and phi must be +1 or -1")
    N = model.n_pq
    if not (1 <= m <= N and 1 <= n <= N):
        raise IndexError("bus index out of range")
    builder = conic.ConicProblemBuilder(2 * N)
    builder.c[:] = 1.0
    _aux_cones(builder, model, aux)

    r = model.Y_LL[n - 1]
    a, b = complex_row_to_real(r)
    off = -complex(r @ model.w)
    proj = psi * a + phi * b
    proj0 = psi * off.real + phi * off.imag
    k = float(np.abs(model.Y_LL_inv[m - 1]).sum())
    e_re = np.zeros(2 * N)
    e_re[m - 1] = 1.0
    e_im = np.zeros(2 * N)
    e_im[N + m - 1] = 1.0
    builder.add_affine_cone(conic.SecondOrder(3), np.vstack([k * proj, e_re, e_im]), [k * proj0, 0.0, 0.0])
    builder.add_affine_cone(conic.NonNegative(2), np.vstack([psi * a, phi * b]), [psi * off.real, phi * off.imag])
    return P1Instance(m, n, psi, phi, builder.build())


def p1_instances(model: GridModel, aux: AuxBounds) -> list[P1Instance]:
    N = model.n_pq
    return [
        formulate_p1(model, aux, m, n, psi, phi)
        for m, n, psi, phi in itertools.product(range(1, N + 1), range(1, N + 1), (1, -1), (1, -1))
    ]


@dataclass(frozen=True)
class P1Report:
    all_infeasible: bool
    first_failure: tuple | None = None  # (m, n, psi, phi)
    failure_status: str | None = None  # "Feasible" or "Unknown"
    n_checked: int = 0
    times: tuple = ()

    def to_dict(self) -> dict:
        return {
            "all_infeasible": self.all_infeasible,
            "first_failure": list(self.first_failure) if self.first_failure else None,
            "failure_status": self.failure_status,
            "n_checked": self.n_checked,
            "max_solve_time": max(self.times, default=0.0),
        }


def check_p1_all(model: GridModel, aux: AuxBounds, opts: conic.SolveOptions | None = None, parallel: int = 1) -> P1Report:
    """Solve the ``4 N^2`` instances; anything short of a verified Infeasible is a failure.

    Sequential runs stop at the first failure. Parallel runs solve every
    instance but still report the first failure in the canonical order.
    """
    instances = p1_instances(model, aux)

    def run(inst):
        return conic.solve(inst.problem, opts)

    times = []
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(run, instances))
    else:
        outcomes = []
        for inst in instances:
            out = run(inst)
            outcomes.append(out)
            if out.status is not conic.Status.INFEASIBLE:
                break
    for inst, out in zip(instances, outcomes):
        times.append(out.solve_time)
        if out.status is not conic.Status.INFEASIBLE:
            return P1Report(False, (inst.m, inst.n, inst.psi, inst.phi), out.status.value, len(outcomes), tuple(times))
    return P1Report(True, None, None, len(outcomes), tuple(times))


@dataclass(frozen=True)
class Calibration:
    lambda_star: float
    aux: AuxBounds
    stop_reason: str  # "feasible" | "unknown" | "cap"
    trace: tuple = ()  # (lam, P1Report) per tested value

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "stop_reason": self.stop_reason,
            "trace": [{"lambda": lam, **rep.to_dict()} for lam, rep in self.trace],
        }


def calibrate_lambda(
    model: GridModel,
    security: SecuritySpec,
    beta: float = 1.0,
    i_node_ref=1.0,
    schedule: LambdaSchedule | None = None,
    opts: conic.SolveOptions | None = None,
    parallel: int = 1,
) -> Calibration:
    """Largest schedule value whose P1 family is entirely infeasible."""
    schedule = schedule or LambdaSchedule()
    ref = np.broadcast_to(np.asarray(i_node_ref, dtype=float), (model.n_pq,))
    if np.any(ref <= 0):
        raise InputError("nodal reference currents must be positive")
    trace = []
    last_good = None
    stop = "cap"
    for k in itertools.count():
        lam = schedule.value(k)
        if lam * ref.max() > schedule.cap:
            break
        aux = AuxBounds.from_security(security, beta, ref, lam)
        rep = check_p1_all(model, aux, opts, parallel)
        trace.append((lam, rep))
        if not rep.all_infeasible:
            stop = "feasible" if rep.failure_status == conic.Status.FEASIBLE.value else "unknown"
            break
        last_good = aux
    if last_good is None:
        if not trace:
            raise CalibrationFailed(f"first schedule value {schedule.start} already exceeds the cap {schedule.cap} p.u.")
        raise CalibrationFailed(f"P1 family not infeasible at the first value lambda={schedule.start} ({stop})")
    return Calibration(last_good.lam, last_good, stop, tuple(trace))


def assemble_v(model: GridModel, security: SecuritySpec, aux: AuxBounds) -> ConstraintSet:
    """Auxiliary block first, then the security constraints."""
    return combine(aux_forms(model, aux), security_forms(model, security))


def sample_aux_set(model: GridModel, aux: AuxBounds, n: int, seed: int | None = 0, max_rounds: int = 200) -> np.ndarray:
    """Rejection samples of the auxiliary set, shape ``(n, N)``.

    Nodal currents are drawn uniformly in their disks; the voltage follows
    from ``v = w + Y_LL^-1 u`` and is kept when every branch cap holds.
    """
    rng = np.random.default_rng(seed)
    N = model.n_pq
    inv = model.Y_LL_inv
    cs = aux_forms(model, aux)
    out = []
    batch = max(64, 4 * n)
    for _ in range(max_rounds):
        radius = aux.i_node * np.sqrt(rng.random((batch, N)))
        u = radius * np.exp(2j * np.pi * rng.random((batch, N)))
        v = model.w + u @ inv.T
        x = np.concatenate([v.real, v.imag], axis=1)
        ok = np.all(np.stack([c.form(x) for c in cs], axis=-1) > 0, axis=1)
        out.extend(v[ok])
        if len(out) >= n:
            return np.array(out[:n])
    raise RuntimeError("rejection sampling of the auxiliary set did not collect enough points")
