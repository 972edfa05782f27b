import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcert import grids
from gridcert.constraints import (
    AuxBounds,
    Kind,
    SecuritySpec,
    aux_forms,
    eval_constraints,
    eval_constraints_batch,
    load_inode_ref,
    load_security,
    power_forms,
    security_forms,
    security_to_dict,
    strictly_inside,
    ConstraintSet,
)
from gridcert.errors import InputError
from gridcert.loadflow import eval_F, to_real


def test_vlow_value(two_bus):
    sec = SecuritySpec.uniform(two_bus, 0.95, 1.05, 0.6)
    margins, _ = eval_constraints(security_forms(two_bus, sec), np.array([1.0 + 0j]))
    assert np.isclose(margins[0], 1 - 0.9025)
    margins, worst = eval_constraints(security_forms(two_bus, sec), np.array([0.95 + 0j]))
    assert np.isclose(margins[0], 0) and np.isclose(worst, 0)


def test_paper_security_bounds_accepted(two_bus):
    sec = SecuritySpec.uniform(two_bus, 0.95, 1.05, 0.6)
    assert np.allclose(sec.imax, 0.6)
    aux = AuxBounds.from_security(sec, 1.0, 1.0, 0.4)
    assert np.allclose(aux.i_branch, 0.6)


def test_inode_aux_values(two_bus):
    sec = SecuritySpec.uniform(two_bus, 0.9, 1.1, 10.0)
    cs = aux_forms(two_bus, AuxBounds.from_security(sec, 1.0, 1.0, 0.4))
    inode = [c for c in cs if c.kind is Kind.I_NODE_AUX][0].form
    assert np.isclose(inode(to_real(np.array([1.0 + 0j]))), 0.16)
    assert np.isclose(inode(to_real(np.array([0.5 + 0j]))), -0.09)


def test_branch_current_forms_match_model(rng):
    m = grids.random_grid(3, seed=2, meshed=True, shunts=True)
    sec = SecuritySpec.uniform(m, 0.9, 1.1, 2.0)
    v = m.w + 0.05 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    margins, _ = eval_constraints(security_forms(m, sec), v)
    branch = margins[2 * m.n_pq:]
    expect = [4.0 - abs(m.branch_current(v, p)) ** 2 for p in m.pairs]
    assert np.allclose(branch, expect)


def test_power_forms_match_F(rng):
    m = grids.random_grid(4, seed=4, meshed=True, shunts=True)
    v = m.w + 0.1 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
    s = eval_F(m, v)
    for bus in range(1, 5):
        re, im = power_forms(m, bus)
        assert np.isclose(re(to_real(v)), s[bus - 1].real)
        assert np.isclose(im(to_real(v)), s[bus - 1].imag)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 1000), st.floats(0.05, 1.0))
def test_aux_forms_concave(n_pq, seed, lam):
    # the auxiliary set must be convex: every aux form is concave
    m = grids.random_grid(n_pq, seed=seed, shunts=True)
    sec = SecuritySpec.uniform(m, 0.9, 1.1, 3.0)
    for c in aux_forms(m, AuxBounds.from_security(sec, 0.8, 1.0, lam)):
        assert np.linalg.eigvalsh(c.form.quadratic).max() <= 1e-9


def test_margins_positive_at_zero_load(chain3):
    sec = SecuritySpec.uniform(chain3, 0.9, 1.1, 1.0)
    assert strictly_inside(security_forms(chain3, sec), chain3.w)


def test_empty_set_has_infinite_margin():
    _, worst = eval_constraints(ConstraintSet((), 0), np.array([1.0 + 0j]))
    assert worst == float("inf")


def test_batch_matches_single(chain3, rng):
    sec = SecuritySpec.uniform(chain3, 0.9, 1.1, 1.0)
    cs = security_forms(chain3, sec)
    v = chain3.w + 0.05 * rng.standard_normal((4, 3))
    batch = eval_constraints_batch(cs, v)
    assert np.allclose(batch[3], eval_constraints(cs, v[3])[0])


def test_security_validation(two_bus):
    with pytest.raises(InputError):
        SecuritySpec.uniform(two_bus, 1.1, 0.9, 1.0)
    with pytest.raises(InputError):
        SecuritySpec.uniform(two_bus, 0.9, 1.1, 0.0)
    with pytest.raises(InputError):
        AuxBounds.from_security(SecuritySpec.uniform(two_bus, 0.9, 1.1, 1.0), 1.5, 1.0, 0.4)


def test_security_json(tmp_path, chain3):
    sec = SecuritySpec(np.array([0.9, 0.92, 0.94]), np.full(3, 1.1), np.arange(1.0, 7.0))
    p = tmp_path / "sec.json"
    p.write_text(json.dumps(security_to_dict(sec, chain3)))
    back = load_security(p, chain3)
    assert np.allclose(back.vmin, sec.vmin) and np.allclose(back.imax, sec.imax)
    # one entry per undirected branch applies to both directions
    p.write_text(json.dumps({"vmin": 0.9, "vmax": 1.1, "imax": [{"from": 0, "to": 1, "value": 1}, {"from": 2, "to": 1, "value": 2}, {"from": 2, "to": 3, "value": 3}]}))
    assert np.allclose(load_security(p, chain3).imax, [1, 1, 2, 2, 3, 3])
    p.write_text(json.dumps({"vmin": 0.9, "vmax": 1.1, "imax": [{"from": 0, "to": 3, "value": 1}]}))
    with pytest.raises(InputError):
        load_security(p, chain3)


def test_inode_ref_file(tmp_path):
    p = tmp_path / "ref.json"
    p.write_text(json.dumps({"i_node_ref": [1.0, 2.0]}))
    assert np.allclose(load_inode_ref(p, 2), [1, 2])
    p.write_text(json.dumps({"i_node_ref": [1.0, -2.0]}))
    with pytest.raises(InputError):
        load_inode_ref(p, 2)
