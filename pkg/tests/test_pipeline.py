import numpy as np
import pytest

from gridcert import grids, pipeline
from gridcert.constraints import SecuritySpec
from gridcert.errors import NoAdmissibleKappa, PreconditionViolated
from gridcert.pipeline import KappaSearch, PipelineOptions, max_kappa
from gridcert.uncertainty import KappaTemplate, Polygon, UncertaintySet
from gridcert.vset import LambdaSchedule


def test_singleton_admissible(two_bus, two_bus_security):
    v = pipeline.test_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet.singleton([0.0]))
    assert v.admissible and v.failure is None
    assert len(v.evidence["boundary"]) == 7
    assert v.evidence["membership"]["min_margin"] > 0


def test_box_past_nose_unknown(two_bus, two_bus_security):
    v = pipeline.test_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet.box([-0.3], [0.0]))
    assert v.result == "Unknown" and v.failure == "BoundaryNotExcluded"
    assert v.not_excluded


def test_initial_voltage_below_vmin(two_bus, two_bus_security):
    with pytest.raises(PreconditionViolated):
        pipeline.test_admissibility(two_bus, two_bus_security, np.array([0.85]), UncertaintySet.box([-0.3], [0.0]))


def test_initial_injection_outside(two_bus, two_bus_security):
    with pytest.raises(PreconditionViolated):
        pipeline.test_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet.singleton([-0.1]))


def test_unbounded_region_rejected(two_bus, two_bus_security):
    # Re s <= 0 contains the initial injection but is unbounded
    v = pipeline.test_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet((Polygon([[1, 0, 0]]),)))
    assert v.failure == "ConnectivityFailed" and v.evidence["uncertainty"]["reasons"]


def test_calibration_failure_reported(two_bus, two_bus_security):
    opts = PipelineOptions(schedule=LambdaSchedule.step_mode(0.6, 0.1))
    v = pipeline.test_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet.singleton([0.0]), opts)
    assert v.failure == "CalibrationFailed"


def test_membership_failure(two_bus):
    # w = 1 sits right at vmax = 1.0 + tiny, so the margin is below the membership tolerance
    sec = SecuritySpec.uniform(two_bus, 0.9, 1.0 + 1e-9, 10.0)
    v = pipeline.test_admissibility(two_bus, sec, two_bus.w, UncertaintySet.singleton([0.0]))
    assert v.failure == "MembershipFailed"


def test_max_kappa(two_bus, two_bus_security, load_template):
    res = max_kappa(two_bus, two_bus_security, two_bus.w, load_template, KappaSearch(0.01, kappa_max=1.0))
    assert res.kappa_star == 0.08
    assert res.bracket == (0.08, 0.09)
    # every tested kappa below the answer was admissible
    assert all(v.admissible for k, v in res.verdicts.items() if k <= res.kappa_star)
    assert not res.verdicts[0.09].admissible
    d = res.to_dict()
    assert d["kappa_star"] == 0.08 and d["verdicts"][0]["kappa"] == 0.01


def test_max_kappa_capped(two_bus, two_bus_security, load_template):
    res = max_kappa(two_bus, two_bus_security, two_bus.w, load_template, KappaSearch(0.01, kappa_max=0.05))
    assert res.kappa_star == 0.05 and res.bracket == (0.05, None)


def test_max_kappa_nothing_admissible(two_bus, two_bus_security):
    template = KappaTemplate.box([-1.0], [0.0], [0.0], [0.0])
    with pytest.raises(NoAdmissibleKappa):
        max_kappa(two_bus, two_bus_security, two_bus.w, template, KappaSearch(0.5, kappa_max=2.0))


def test_reused_voltage_set(chain3):
    sec = SecuritySpec.uniform(chain3, 0.9, 1.1, 5.0)
    opts = PipelineOptions()
    vs = pipeline.build_voltage_set(chain3, sec, opts)
    u = UncertaintySet.box(np.full(3, -0.2 - 0.1j), np.zeros(3))
    a = pipeline.test_admissibility(chain3, sec, chain3.w, u, opts)
    b = pipeline.test_admissibility(chain3, sec, chain3.w, u, opts, voltage_set=vs)
    assert a.result == b.result and a.not_excluded == b.not_excluded
