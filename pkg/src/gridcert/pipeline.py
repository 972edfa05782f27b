"""Admissibility test and the kappa search built on top of it.

The verdict is one-sided: ``Admissible`` is a proof (up to verified
certificates), ``Unknown`` only means the method could not conclude.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conic, moment, uncertainty as unc
from .constraints import ConstraintSet, SecuritySpec, eval_constraints, security_forms, MEMBERSHIP_TOL
from .errors import CalibrationFailed, NoAdmissibleKappa, PreconditionViolated
from .grid import GridModel
from .loadflow import SIGMA_TOL, eval_F, is_nonsingular
from .vset import Calibration, LambdaSchedule, assemble_v, calibrate_lambda

ADMISSIBLE = "Admissible"
UNKNOWN = "Unknown"

MEMBERSHIP_FAILED = "MembershipFailed"
CONNECTIVITY_FAILED = "ConnectivityFailed"
BOUNDARY_NOT_EXCLUDED = "BoundaryNotExcluded"
CALIBRATION_FAILED = "CalibrationFailed"


@dataclass(frozen=True)
class PipelineOptions:
    beta: float = 1.0
    i_node_ref: object = 1.0
    schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    omega: int = moment.DEFAULT_ORDER
    parallel: int = 1
    membership_tol: float = MEMBERSHIP_TOL
    sigma_tol: float = SIGMA_TOL
    solve: conic.SolveOptions = field(default_factory=conic.SolveOptions)
    dump_dir: object = None


@dataclass
class Verdict:
    result: str
    failure: str | None = None
    not_excluded: list = field(default_factory=list)
    evidence: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return self.result == ADMISSIBLE

    def to_dict(self) -> dict:
        return {"result": self.result, "failure": self.failure, "not_excluded": list(self.not_excluded), "evidence": self.evidence}


def check_preconditions(model, security: SecuritySpec, v_initial, uset, sigma_tol=SIGMA_TOL) -> dict:
    """Initial state secured, non-singular and mapped into the uncertainty set; raises otherwise."""
    v_initial = np.asarray(v_initial, dtype=complex)
    if v_initial.shape != (model.n_pq,):
        raise PreconditionViolated(f"initial voltage must have {model.n_pq} entries")
    margins, worst = eval_constraints(security_forms(model, security), v_initial)
    ok_sing, sigma = is_nonsingular(model, v_initial, sigma_tol)
    s0 = eval_F(model, v_initial)
    inside = unc.contains(uset, s0)
    report = {"security_min_margin": worst, "sigma_min": sigma, "initial_injection_inside": inside}
    if not worst > 0:
        raise PreconditionViolated(f"initial state violates security constraints (min margin {worst:.3g})")
    if not ok_sing:
        raise PreconditionViolated(f"initial state is singular (sigma_min {sigma:.3g})")
    if not inside:
        raise PreconditionViolated("F(v_initial) lies outside the uncertainty set")
    return report


def build_voltage_set(model, security, opts: PipelineOptions) -> tuple[Calibration, ConstraintSet]:
    cal = calibrate_lambda(model, security, opts.beta, opts.i_node_ref, opts.schedule, opts.solve, opts.parallel)
    return cal, assemble_v(model, security, cal.aux)


def test_admissibility(
    model: GridModel,
    security: SecuritySpec,
    v_initial,
    uset: unc.UncertaintySet,
    opts: PipelineOptions | None = None,
    voltage_set: tuple[Calibration, ConstraintSet] | None = None,
) -> Verdict:
    """Run both method steps and the three framework tests.

    ``voltage_set`` may carry a previous calibration, which does not depend
    on the uncertainty set.
    """
    opts = opts or PipelineOptions()
    t0 = time.perf_counter()
    evidence: dict = {"preconditions": check_preconditions(model, security, v_initial, uset, opts.sigma_tol)}

    reasons = unc.validation_reasons(uset)
    evidence["uncertainty"] = {"valid": not reasons, "reasons": reasons}
    if reasons:
        return Verdict(UNKNOWN, CONNECTIVITY_FAILED, evidence=evidence)

    if voltage_set is None:
        try:
            voltage_set = build_voltage_set(model, security, opts)
        except CalibrationFailed as exc:
            evidence["calibration"] = {"error": str(exc)}
            return Verdict(UNKNOWN, CALIBRATION_FAILED, evidence=evidence)
    cal, cs = voltage_set
    evidence["calibration"] = cal.to_dict()
    evidence["constraints"] = cs.labels()

    margins, worst = eval_constraints(cs, np.asarray(v_initial, dtype=complex))
    evidence["membership"] = {"min_margin": worst, "tol": opts.membership_tol}
    if not worst > opts.membership_tol:
        return Verdict(UNKNOWN, MEMBERSHIP_FAILED, evidence=evidence)

    results = moment.check_p0_infeasible(model, cs, uset, opts.omega, opts.solve, opts.parallel, opts.dump_dir)
    evidence["boundary"] = [r.to_dict() for r in results]
    evidence["wall_time"] = time.perf_counter() - t0
    open_ells = [r.ell for r in results if r.status != "Infeasible"]
    if open_ells:
        return Verdict(UNKNOWN, BOUNDARY_NOT_EXCLUDED, open_ells, evidence)
    return Verdict(ADMISSIBLE, evidence=evidence)


test_admissibility.__test__ = False  # the name would otherwise be collected by pytest


# --- kappa search ---------------------------------------------------------


@dataclass(frozen=True)
class KappaSearch:
    resolution: float = 0.01
    kappa_min: float | None = None  # defaults to one resolution step
    kappa_max: float = 10.0


@dataclass
class KappaResult:
    kappa_star: float
    bracket: tuple  # (last admissible, first unknown or None)
    verdicts: dict  # kappa -> Verdict

    def to_dict(self) -> dict:
        return {
            "kappa_star": self.kappa_star,
            "bracket": list(self.bracket),
            "verdicts": [
                {"kappa": k, "result": v.result, "failure": v.failure, "not_excluded": v.not_excluded}
                for k, v in sorted(self.verdicts.items())
            ],
        }


def max_kappa(
    model: GridModel,
    security: SecuritySpec,
    v_initial,
    template: unc.KappaTemplate,
    search: KappaSearch | None = None,
    opts: PipelineOptions | None = None,
) -> KappaResult:
    """Largest kappa on the resolution grid whose region is certified admissible.

    Doubling finds an upper bracket, then bisection on integer multiples of
    the resolution. Verdicts are monotone in kappa because the regions nest.
    """
    search = search or KappaSearch()
    opts = opts or PipelineOptions()
    res = search.resolution
    if res <= 0:
        raise ValueError("resolution must be positive")
    try:
        voltage_set = build_voltage_set(model, security, opts)
    except CalibrationFailed as exc:
        raise NoAdmissibleKappa(f"calibration failed: {exc}") from exc
    verdicts: dict = {}

    def kappa_of(i):
        return round(i * res, 12)

    def admissible(i) -> bool:
        k = kappa_of(i)
        if k not in verdicts:
            verdicts[k] = test_admissibility(model, security, v_initial, template.at(k), opts, voltage_set)
        return verdicts[k].admissible

    lo = max(1, int(round((search.kappa_min or res) / res)))
    top = int(np.floor(search.kappa_max / res + 1e-9))
    if not admissible(lo):
        raise NoAdmissibleKappa(f"not admissible at the smallest tested kappa {kappa_of(lo)}")
    hi = None
    step = 1
    while hi is None:
        cand = min(lo + step, top)
        if cand == lo:
            break
        if admissible(cand):
            lo = cand
            step *= 2
        else:
            hi = cand
    if hi is not None:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if admissible(mid):
                lo = mid
            else:
                hi = mid
    return KappaResult(kappa_of(lo), (kappa_of(lo), None if hi is None else kappa_of(hi)), verdicts)
