import numpy as np
import pytest

from gridcert import conic, grids
from gridcert.constraints import AuxBounds, Kind, SecuritySpec, aux_forms, eval_constraints, security_forms
from gridcert.errors import CalibrationFailed, InputError
from gridcert.loadflow import min_singular_value
from gridcert.vset import (
    LambdaSchedule,
    assemble_v,
    calibrate_lambda,
    check_p1_all,
    formulate_p1,
    p1_instances,
    sample_aux_set,
)


def aux_at(security, lam):
    return AuxBounds.from_security(security, 1.0, 1.0, lam)


def test_instance_count(two_bus, two_bus_security, chain3):
    assert len(p1_instances(two_bus, aux_at(two_bus_security, 0.4))) == 4
    sec3 = SecuritySpec.uniform(chain3, 0.9, 1.1, 5.0)
    assert len(p1_instances(chain3, aux_at(sec3, 0.4))) == 36


@pytest.mark.parametrize("signs", [(1, 1), (1, -1), (-1, 1), (-1, -1)])
def test_small_cap_infeasible(two_bus, two_bus_security, signs):
    inst = formulate_p1(two_bus, aux_at(two_bus_security, 0.4), 1, 1, *signs)
    out = conic.solve(inst.problem)
    assert out.status is conic.Status.INFEASIBLE
    assert conic.verify_infeasibility_certificate(inst.problem, out.certificate)


def test_large_cap_feasible(two_bus, two_bus_security):
    rep = check_p1_all(two_bus, aux_at(two_bus_security, 0.8))
    assert not rep.all_infeasible and rep.failure_status == "Feasible"
    assert check_p1_all(two_bus, aux_at(two_bus_security, 0.4)).all_infeasible
    assert check_p1_all(two_bus, aux_at(two_bus_security, 1e-4)).all_infeasible


def test_parallel_matches_sequential(chain3):
    sec = SecuritySpec.uniform(chain3, 0.9, 1.1, 5.0)
    for lam in (0.5, 30.0):
        a = check_p1_all(chain3, aux_at(sec, lam))
        b = check_p1_all(chain3, aux_at(sec, lam), parallel=3)
        assert (a.all_infeasible, a.first_failure) == (b.all_infeasible, b.first_failure)


def test_calibration_step(two_bus, two_bus_security):
    cal = calibrate_lambda(two_bus, two_bus_security, schedule=LambdaSchedule.step_mode(0.1, 0.1))
    assert cal.lambda_star == 0.4 and cal.stop_reason == "feasible"
    assert [lam for lam, _ in cal.trace] == [0.1, 0.2, 0.3, 0.4, 0.5]


def test_calibration_fails_above_threshold(two_bus, two_bus_security):
    with pytest.raises(CalibrationFailed):
        calibrate_lambda(two_bus, two_bus_security, schedule=LambdaSchedule.step_mode(0.5, 0.1))
    with pytest.raises(CalibrationFailed):
        calibrate_lambda(two_bus, two_bus_security, schedule=LambdaSchedule.step_mode(2.0, 0.1))


def test_calibration_cap(two_bus, two_bus_security):
    cal = calibrate_lambda(two_bus, two_bus_security, schedule=LambdaSchedule.step_mode(0.1, 0.1, cap=0.25))
    assert cal.lambda_star == 0.2 and cal.stop_reason == "cap"


def test_schedule_validation():
    with pytest.raises(InputError):
        LambdaSchedule(0.1, ratio=0.9)
    with pytest.raises(InputError):
        LambdaSchedule(0.1, ratio=1.2, step=0.1)
    assert LambdaSchedule.step_mode(0.1, 0.1).value(3) == 0.4


def test_tighter_branch_caps_never_lower_lambda(chain3):
    # smaller branch caps shrink every P1 feasible set, so infeasibility persists
    loose = SecuritySpec.uniform(chain3, 0.9, 1.1, 5.0)
    tight = SecuritySpec.uniform(chain3, 0.9, 1.1, 2.5)
    sched = LambdaSchedule.ratio_mode(0.5, 1.5, cap=50.0)
    assert calibrate_lambda(chain3, tight, schedule=sched).lambda_star >= calibrate_lambda(chain3, loose, schedule=sched).lambda_star


def test_assembled_set(two_bus, two_bus_security):
    cal = calibrate_lambda(two_bus, two_bus_security)
    cs = assemble_v(two_bus, two_bus_security, cal.aux)
    assert len(cs) == 7 and cs.n_aux == 3
    assert [c.kind for c in cs][:3] == [Kind.I_BRANCH_AUX, Kind.I_BRANCH_AUX, Kind.I_NODE_AUX]
    assert eval_constraints(cs, two_bus.w)[1] > 0
    plain = security_forms(two_bus, two_bus_security)
    stripped = cs.without_aux()
    assert [c.kind for c in stripped] == [c.kind for c in plain]
    x = np.array([0.95, 0.1])
    assert np.allclose([c.form(x) for c in stripped], [c.form(x) for c in plain])


def test_calibrated_set_nonsingular():
    m = grids.random_grid(3, seed=8, meshed=True)
    sec = SecuritySpec.uniform(m, 0.9, 1.1, 5.0)
    cal = calibrate_lambda(m, sec)
    v = sample_aux_set(m, cal.aux, 10_000, seed=1)
    assert len(v) == 10_000
    assert np.min(min_singular_value(m, v)) > 0


def test_calibrated_set_convex(rng):
    # midpoints of sampled members stay inside
    m = grids.random_grid(3, seed=9)
    sec = SecuritySpec.uniform(m, 0.9, 1.1, 5.0)
    cal = calibrate_lambda(m, sec)
    cs = aux_forms(m, cal.aux)
    v = sample_aux_set(m, cal.aux, 400, seed=2)
    mid = 0.5 * (v[:200] + v[200:])
    assert all(eval_constraints(cs, p)[1] > 0 for p in mid)
