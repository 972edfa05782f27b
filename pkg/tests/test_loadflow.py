import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcert import grids
from gridcert.errors import NoConvergence, PathLost
from gridcert.loadflow import (
    continuation_trace,
    eval_F,
    is_nonsingular,
    jacobian,
    locate_nose_point,
    min_singular_value,
    newton_batch,
    singularity_necessary_condition,
    solve_load_flow,
    to_complex,
    to_real,
)


def fd_jacobian(model, v, h=1e-6):
    x = to_real(v)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((to_real(eval_F(model, to_complex(x + e))) - to_real(eval_F(model, to_complex(x - e)))) / (2 * h))
    return np.column_stack(cols)


def test_F_examples(two_bus):
    assert np.allclose(eval_F(two_bus, two_bus.w), 0)
    assert np.isclose(eval_F(two_bus, np.array([0.9]))[0], -0.09)
    assert np.isclose(eval_F(two_bus, np.array([0.5]))[0], -0.25)


def test_jacobian_two_bus_closed_form(two_bus):
    # F = |v|^2 - v: Re F = x^2 + y^2 - x, Im F = -y
    x, y = 0.8, 0.3
    J = jacobian(two_bus, np.array([x + 1j * y]))
    assert np.allclose(J, [[2 * x - 1, 2 * y], [0, -1]])
    assert np.allclose(J, fd_jacobian(two_bus, np.array([x + 1j * y])), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 1000))
def test_jacobian_matches_finite_differences(n_pq, seed):
    m = grids.random_grid(n_pq, seed=seed, meshed=True, shunts=True)
    rng = np.random.default_rng(seed)
    v = m.w * (1 + 0.1 * rng.standard_normal(n_pq)) + 0.05j * rng.standard_normal(n_pq)
    J = jacobian(m, v)
    assert np.allclose(J, fd_jacobian(m, v), atol=1e-6 * max(1.0, np.abs(J).max()))


def test_jacobian_at_zero_load(chain3):
    J = jacobian(chain3, chain3.w)
    assert np.linalg.matrix_rank(J) == 6
    assert is_nonsingular(chain3, chain3.w)[0]


def test_jacobian_batched(chain3, rng):
    v = chain3.w + 0.01 * rng.standard_normal((5, 3))
    assert np.allclose(jacobian(chain3, v)[2], jacobian(chain3, v[2]))
    assert np.allclose(min_singular_value(chain3, v)[1], min_singular_value(chain3, v[1]))


def test_nonsingularity_examples(two_bus):
    assert not is_nonsingular(two_bus, np.array([0.5]))[0]
    ok, sigma = is_nonsingular(two_bus, np.array([0.9]))
    assert ok and sigma > 0.5
    with pytest.raises(ValueError):
        is_nonsingular(two_bus, np.array([0.9]), sigma_tol=0)


def test_singularity_condition_examples(two_bus):
    assert not singularity_necessary_condition(two_bus, two_bus.w)
    assert singularity_necessary_condition(two_bus, np.array([0.5]))
    assert not singularity_necessary_condition(two_bus, np.array([0.9]))


def test_newton_examples(two_bus):
    assert np.allclose(solve_load_flow(two_bus, np.array([0.0]), two_bus.w), two_bus.w)
    assert np.allclose(solve_load_flow(two_bus, np.array([-0.09]), two_bus.w), [0.9])
    with pytest.raises(NoConvergence):
        solve_load_flow(two_bus, np.array([-0.3]), two_bus.w)


def test_newton_batch_agrees(chain3):
    s = np.array([-0.5 - 0.2j, -0.3, -0.4 - 0.1j])
    v = solve_load_flow(chain3, s, chain3.w)
    vb, ok = newton_batch(chain3, s, np.tile(chain3.w, (3, 1)))
    assert ok.all() and np.allclose(vb, v)


def test_continuation_constant_path(chain3):
    s = eval_F(chain3, chain3.w)
    tr = continuation_trace(chain3, [s, s], chain3.w, steps=10)
    assert np.allclose(tr.v, chain3.w)


def test_continuation_to_high_voltage_root(two_bus):
    tr = continuation_trace(two_bus, [[0.0], [-0.2]], two_bus.w, steps=20)
    assert np.isclose(tr.v[-1, 0], (1 + np.sqrt(0.2)) / 2)
    assert len(tr.t) == 21


def test_continuation_loses_path_at_nose(two_bus):
    with pytest.raises(PathLost) as info:
        continuation_trace(two_bus, [[0.0], [-0.3]], two_bus.w, steps=100)
    # the nose sits at s = -0.25, i.e. t = 5/6 along the path
    assert 0.75 <= info.value.t_last_good <= 5 / 6 + 1e-9


def test_nose_point_two_bus(two_bus):
    v, t, sigma = locate_nose_point(two_bus, np.array([-1.0]))
    assert np.isclose(t, 0.25, atol=1e-8)
    assert np.isclose(v[0], 0.5, atol=1e-6)
    assert sigma < 1e-6
    assert singularity_necessary_condition(two_bus, v)


def test_nose_point_chain(chain3):
    v, t, sigma = locate_nose_point(chain3, np.array([-1.0, -1.0, -1.0 - 0.3j]))
    assert sigma < 1e-6
    assert singularity_necessary_condition(chain3, v)
