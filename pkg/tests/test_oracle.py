import ast
from pathlib import Path

import numpy as np
import pytest

from gridcert import grids, oracle
from gridcert.constraints import SecuritySpec, eval_constraints_batch, security_forms
from gridcert.grid import BranchSpec, build_grid
from gridcert.loadflow import eval_F
from gridcert.uncertainty import UncertaintySet
from gridcert.vset import assemble_v, calibrate_lambda


def test_independent_of_conic_machinery():
    tree = ast.parse(Path(oracle.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
            imported.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    forbidden = {"conic", "moment", "vset", "polynomial", "pipeline", "clarabel"}
    assert not {name.split(".")[-1] for name in imported} & forbidden


@pytest.mark.parametrize(
    "s, expect",
    [(0.0, [0.0, 1.0]), (-0.25, [0.5]), (-0.3, [])],
)
def test_two_bus_solution_sets(two_bus, s, expect):
    sols = oracle.enumerate_solutions_small(two_bus, [s])
    assert np.allclose(np.sort_complex(sols[:, 0]), expect, atol=1e-6)


def test_two_bus_complex_injection(two_bus):
    sols = oracle.enumerate_solutions_small(two_bus, [-0.1 + 0.05j])
    assert len(sols) == 2
    assert np.allclose(eval_F(two_bus, sols), -0.1 + 0.05j)


def test_three_bus_enumeration_matches_multistart():
    m = grids.random_grid(2, seed=3)
    v = m.w * 0.95
    s = eval_F(m, v)
    exact = oracle.enumerate_solutions_small(m, s)
    assert any(np.allclose(row, v, atol=1e-8) for row in exact)
    ms = oracle.multistart_solutions(m, s, n_starts=4000, radius=2.0)
    for row in ms:
        assert any(np.allclose(row, e, atol=1e-6) for e in exact)


def test_decoupled_buses_closed_form():
    # bus 2 hangs off the slack only; Y_LL is diagonal
    m = build_grid([BranchSpec(0, 1, 1.0), BranchSpec(0, 2, 2.0)], 2)
    sols = oracle.enumerate_solutions_small(m, [0.0, 0.0])
    assert len(sols) == 4


def test_double_solution_pattern():
    # large injection with both solutions; at most one may sit inside the auxiliary set
    m = grids.two_bus(y=5 - 3.6j)
    s = np.array([-1.105 + 1j])
    sols = oracle.enumerate_solutions_small(m, s)
    assert len(sols) == 2
    sec = SecuritySpec.uniform(m, 0.5, 1.5, 50.0)
    cal = calibrate_lambda(m, sec)
    cs = assemble_v(m, sec, cal.aux).aux_only()
    assert (eval_constraints_batch(cs, sols).min(axis=1) > 0).sum() <= 1


def test_exit_distance_two_bus(two_bus, two_bus_security):
    cs = security_forms(two_bus, two_bus_security)
    t, idx = oracle.exit_distance(cs, two_bus.w, np.array([[-1.0, 0.0], [1.0, 0.0]]))
    assert np.allclose(t, [0.1, 0.1])
    assert list(idx) == [0, 1]  # VLow then VUp


def test_paths_singleton_clean(two_bus, two_bus_security):
    assert oracle.brute_force_admissibility(two_bus, two_bus_security, two_bus.w, UncertaintySet.singleton([0.0]), 20, 20) == []


def test_paths_past_nose(two_bus, two_bus_security):
    u = UncertaintySet.box([-0.3], [0.0])
    found = oracle.brute_force_admissibility(two_bus, two_bus_security, two_bus.w, u, 50, 100, seed=4)
    assert found
    assert {v.kind for v in found} <= {"margin", "PathLost", "singular"}
    again = oracle.brute_force_admissibility(two_bus, two_bus_security, two_bus.w, u, 50, 100, seed=4)
    assert [v.to_dict() for v in found] == [v.to_dict() for v in again]


def test_boundary_probe(two_bus, two_bus_security):
    cal = calibrate_lambda(two_bus, two_bus_security)
    cs = assemble_v(two_bus, two_bus_security, cal.aux)
    assert oracle.boundary_probe(two_bus, cs, UncertaintySet.box([-0.08], [0.0]), 100_000) == []
    hits = oracle.boundary_probe(two_bus, cs, UncertaintySet.box([-0.3], [0.0]), 100_000, focus=4)
    assert hits and all(h.ell == 4 for h in hits)
    assert np.isclose(abs(hits[0].v[0]), 0.9, atol=1e-6)


def test_uniqueness_probe(two_bus, two_bus_security):
    cal = calibrate_lambda(two_bus, two_bus_security)
    cs = assemble_v(two_bus, two_bus_security, cal.aux).aux_only()
    assert oracle.uniqueness_probe(two_bus, cs, trials=100) == []


def test_sample_inside(chain3):
    cs = security_forms(chain3, SecuritySpec.uniform(chain3, 0.9, 1.1, 1.0))
    v = oracle.sample_inside(cs, 200, chain3.w, seed=1)
    assert (eval_constraints_batch(cs, v).min(axis=1) >= -1e-12).all()
