import json

import numpy as np
import pytest

from gridcert.errors import EmptyRegion, InputError, UnboundedRegion, UnsupportedUncertainty
from gridcert.uncertainty import (
    KappaTemplate,
    Polygon,
    Singleton,
    UncertaintySet,
    contains,
    load_uncertainty,
    sample,
    uncertainty_to_dict,
    validate,
    validation_reasons,
)


def triangle(k):
    # Re >= -k, Im >= -k, Re + Im <= 0
    return Polygon([[-1, 0, k], [0, -1, k], [1, 1, 0]])


def test_valid_sets():
    validate(UncertaintySet.singleton([0.1, -0.2j]))
    validate(UncertaintySet((triangle(0.35), Singleton(0))))
    assert validation_reasons(UncertaintySet((triangle(0.35),))) == []


def test_empty_and_unbounded():
    with pytest.raises(EmptyRegion):
        validate(UncertaintySet((Polygon([[1, 0, -1], [-1, 0, -1]]),)))
    with pytest.raises(UnboundedRegion):
        validate(UncertaintySet((Polygon([[1, 0, 0]]),)))
    assert validation_reasons(UncertaintySet((Singleton(0), Polygon([[1, 0, 0]])))) != []


def test_unsupported_region():
    with pytest.raises(UnsupportedUncertainty):
        UncertaintySet(("disk",))
    with pytest.raises(UnsupportedUncertainty):
        Polygon([[0, 0, 1]])


def test_contains():
    box = UncertaintySet.box([-1 - 1j], [0])
    assert contains(box, [-0.5 - 0.5j])
    assert contains(box, [-1 + 0j])
    assert not contains(box, [0.1])
    single = UncertaintySet.singleton([0.2 + 0.1j])
    assert contains(single, [0.2 + 0.1j])
    assert not contains(single, [0.2 + 0.1j + 1e-3])
    with pytest.raises(ValueError):
        contains(single, [0, 0])


def test_box_vertices_and_samples():
    box = UncertaintySet.box([-1 - 1j], [0])
    verts = box.regions[0].vertices()
    assert len(verts) == 4
    s = sample(box, 20, seed=3)
    assert set(np.round(s[:4, 0], 12)) == set(np.round(verts, 12))
    assert all(contains(box, x) for x in s)
    assert np.array_equal(s, sample(box, 20, seed=3))


def test_singleton_samples():
    s = sample(UncertaintySet.singleton([0.5, -0.1j]), 3)
    assert np.allclose(s, [[0.5, -0.1j]] * 3)


def test_template():
    t = KappaTemplate.box([-1], [0], [0], [0])
    r = t.at(0.3).regions[0]
    assert r.contains(-0.3) and not r.contains(-0.31) and not r.contains(-0.1 + 0.01j)


def test_json_round_trip(tmp_path):
    u = UncertaintySet((triangle(0.2), Singleton(0.1 - 0.1j)))
    p = tmp_path / "u.json"
    p.write_text(json.dumps(uncertainty_to_dict(u)))
    back = load_uncertainty(p, 2)
    assert isinstance(back.regions[1], Singleton) and back.regions[1].point == 0.1 - 0.1j
    assert np.allclose(back.regions[0].half_planes, u.regions[0].half_planes)


def test_json_template_and_errors(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"kappa_template": True, "buses": [{"half_planes": [[1, 0, 0], [-1, 0, 1], [0, 1, 0], [0, -1, 0]]}]}))
    t = load_uncertainty(p, 1)
    assert isinstance(t, KappaTemplate)
    assert contains(t.at(0.5), [-0.5])
    p.write_text(json.dumps({"buses": [{"point": {"re": 0, "im": 0}}]}))
    with pytest.raises(InputError):
        load_uncertainty(p, 2)
    p.write_text(json.dumps({"buses": [{"disk": 1}]}))
    with pytest.raises(InputError):
        load_uncertainty(p, 1)
