"""Load-flow function, its real Jacobian, Newton solves and continuation.

Rectangular coordinates are ordered ``x = (Re v_1..Re v_N, Im v_1..Im v_N)``
and the power mismatch likewise ``(Re s_1..Re s_N, Im s_1..Im s_N)``.
Most routines accept a leading batch dimension on ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, PathLost
from .grid import GridModel

MAX_ITER = 50
RESIDUAL_TOL = 1e-10
SIGMA_TOL = 1e-7


def to_real(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1)


def to_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def eval_F(model: GridModel, v: np.ndarray) -> np.ndarray:
    """Power injections ``s = diag(v) conj(Y_LL (v - w))``."""
    v = np.asarray(v, dtype=complex)
    current = (v - model.w) @ model.Y_LL.T
    return v * np.conj(current)


def jacobian(model: GridModel, v: np.ndarray) -> np.ndarray:
    """Real 2N x 2N Jacobian of F at ``v`` (batched over leading axes)."""
    v = np.asarray(v, dtype=complex)
    current = (v - model.w) @ model.Y_LL.T
    Ybar = np.conj(model.Y_LL)
    diag_i = np.conj(current)[..., :, None] * np.eye(model.n_pq)
    vY = v[..., :, None] * Ybar
    dx = diag_i + vY
    dy = 1j * (diag_i - vY)
    top = np.concatenate([dx.real, dy.real], axis=-1)
    bottom = np.concatenate([dx.imag, dy.imag], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def min_singular_value(model: GridModel, v: np.ndarray) -> np.ndarray | float:
    sv = np.linalg.svd(jacobian(model, v), compute_uv=False)
    return sv[..., -1]


def is_nonsingular(model: GridModel, v: np.ndarray, sigma_tol: float = SIGMA_TOL) -> tuple[bool, float]:
    """True iff the smallest singular value of the Jacobian exceeds ``sigma_tol``."""
    if sigma_tol <= 0:
        raise ValueError("sigma_tol must be positive")
    sigma = float(min_singular_value(model, v))
    return sigma > sigma_tol, sigma


def singularity_necessary_condition(model: GridModel, v: np.ndarray, atol: float = 1e-9) -> bool:
    """Necessary condition for a singular Jacobian.

    True iff some bus ``m`` has ``sum_n |(Y_LL^-1)_mn i_n| >= |v_m|`` where
    ``i = Y_LL (v - w)``. ``atol`` absorbs round-off at points located only
    approximately (on one-bus grids the condition holds with equality on the
    whole singular set).
    """
    v = np.asarray(v, dtype=complex)
    i = model.nodal_current(v)
    lhs = np.abs(model.Y_LL_inv * i[None, :]).sum(axis=1)
    return bool(np.any(lhs >= np.abs(v) - atol))


def _residual(model, v, s):
    return np.max(np.abs(eval_F(model, v) - s), axis=-1)


def solve_load_flow(
    model: GridModel,
    s: np.ndarray,
    v_start: np.ndarray,
    max_iter: int = MAX_ITER,
    residual_tol: float = RESIDUAL_TOL,
    step_damping: bool = True,
) -> np.ndarray:
    """Newton-Raphson on the rectangular load-flow equations.

    With ``step_damping`` the step is halved while the residual increases.
    Raises NoConvergence when the budget is exhausted or a step is singular.
    """
    s = np.asarray(s, dtype=complex)
    v = np.array(v_start, dtype=complex)
    res = _residual(model, v, s)
    for it in range(max_iter + 1):
        if res <= residual_tol:
            return v
        if it == max_iter:
            break
        mismatch = to_real(eval_F(model, v) - s)
        try:
            dx = np.linalg.solve(jacobian(model, v), -mismatch)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular Jacobian in Newton step", it, res) from exc
        if not np.all(np.isfinite(dx)):
            raise NoConvergence("non-finite Newton step", it, res)
        step = to_complex(dx)
        alpha = 1.0
        candidate = v + step
        new_res = _residual(model, candidate, s)
        if step_damping:
            while new_res > res and alpha > 1e-6:
                alpha *= 0.5
                candidate = v + alpha * step
                new_res = _residual(model, candidate, s)
        v, res = candidate, new_res
    raise NoConvergence(f"no convergence after {max_iter} iterations (residual {res:.3e})", max_iter, res)


def high_voltage_solution(model: GridModel, s: np.ndarray, **newton_opts) -> np.ndarray:
    """Load-flow solution reached by Newton started at the zero-load voltage."""
    return solve_load_flow(model, s, model.w, **newton_opts)


def newton_batch(model: GridModel, s: np.ndarray, v_start: np.ndarray, max_iter: int = 30, residual_tol: float = RESIDUAL_TOL):
    """Undamped Newton run on many starting points at once.

    Returns ``(v, converged)``; rows that hit a singular step keep their
    last iterate and are reported as not converged.
    """
    v = np.array(v_start, dtype=complex, copy=True)
    s = np.broadcast_to(np.asarray(s, dtype=complex), v.shape)
    active = np.ones(v.shape[0], dtype=bool)
    for _ in range(max_iter):
        res = _residual(model, v, s)
        done = res <= residual_tol
        active &= ~done & np.isfinite(res)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        J = jacobian(model, v[idx])
        rhs = -to_real(eval_F(model, v[idx]) - s[idx])
        # drop singular systems individually instead of failing the batch
        det_ok = np.abs(np.linalg.det(J)) > 1e-300
        dx = np.zeros_like(rhs)
        if det_ok.any():
            dx[det_ok] = np.linalg.solve(J[det_ok], rhs[det_ok][..., None])[..., 0]
        active[idx[~det_ok]] = False
        v[idx] = v[idx] + to_complex(dx)
    res = _residual(model, v, s)
    converged = np.isfinite(res) & (res <= residual_tol)
    return v, converged


@dataclass
class ContinuationTrace:
    t: np.ndarray
    s: np.ndarray
    v: np.ndarray = field(repr=False)


def _path_point(s_path: np.ndarray, t: float) -> np.ndarray:
    k = len(s_path) - 1
    if k == 0:
        return s_path[0]
    pos = min(max(t, 0.0), 1.0) * k
    seg = min(int(pos), k - 1)
    frac = pos - seg
    return (1 - frac) * s_path[seg] + frac * s_path[seg + 1]


def continuation_trace(
    model: GridModel,
    s_path,
    v_start: np.ndarray,
    steps: int = 100,
    continuity_bound: float = 0.1,
    max_bisect: int = 6,
    residual_tol: float = RESIDUAL_TOL,
) -> ContinuationTrace:
    """Follow the load-flow solution along a piecewise-linear injection path.

    ``s_path`` is a sequence of waypoints; the path parameter ``t`` runs over
    [0, 1] with the waypoints equally spaced in ``t``. Each of the ``steps``
    parameter steps uses the previous solution as predictor and is bisected
    (up to ``max_bisect`` times) when Newton fails or the voltage jumps by
    more than ``continuity_bound``. Raises PathLost otherwise.
    """
    s_path = np.atleast_2d(np.asarray(s_path, dtype=complex))
    try:
        v = solve_load_flow(model, s_path[0], v_start, residual_tol=residual_tol)
    except NoConvergence as exc:
        raise PathLost("no solution at path start", 0.0) from exc
    ts, ss, vs = [0.0], [s_path[0]], [v]

    def advance(v_prev, t_a, t_b, depth):
        s_b = _path_point(s_path, t_b)
        try:
            v_b = solve_load_flow(model, s_b, v_prev, max_iter=20, residual_tol=residual_tol)
            if np.max(np.abs(v_b - v_prev)) <= continuity_bound:
                return v_b
        except NoConvergence:
            pass
        if depth >= max_bisect:
            return None
        t_mid = 0.5 * (t_a + t_b)
        v_mid = advance(v_prev, t_a, t_mid, depth + 1)
        if v_mid is None:
            return None
        return advance(v_mid, t_mid, t_b, depth + 1)

    grid_t = np.linspace(0.0, 1.0, steps + 1)
    for t_a, t_b in zip(grid_t[:-1], grid_t[1:]):
        v_next = advance(v, t_a, t_b, 0)
        if v_next is None:
            trace = ContinuationTrace(np.array(ts), np.array(ss), np.array(vs))
            raise PathLost(f"solution branch lost after t={t_a:.4f}", float(t_a), trace)
        v = v_next
        ts.append(float(t_b))
        ss.append(_path_point(s_path, t_b))
        vs.append(v)
    return ContinuationTrace(np.array(ts), np.array(ss), np.array(vs))


def locate_nose_point(
    model: GridModel,
    direction: np.ndarray,
    v_start: np.ndarray | None = None,
    s_start: np.ndarray | None = None,
    t_max: float = 10.0,
    steps: int = 400,
    tol: float = 1e-12,
):
    """Find the fold of ``s(t) = s_start + t * direction`` reached from ``v_start``.

    Coarse continuation brackets the loss of the branch, then Newton on the
    extended system ``F(v) = s(t), J(v) phi = 0, phi0 . phi = 1`` refines it.
    Returns ``(v, t, sigma_min)``.
    """
    v_start = model.w if v_start is None else np.asarray(v_start, dtype=complex)
    s_start = eval_F(model, v_start) if s_start is None else np.asarray(s_start, dtype=complex)
    direction = np.asarray(direction, dtype=complex)
    path = np.array([s_start, s_start + t_max * direction])
    try:
        continuation_trace(model, path, v_start, steps=steps, max_bisect=10)
        raise NoConvergence("no fold found along the direction within t_max")
    except PathLost as lost:
        trace = lost.trace
    v_guess = trace.v[-1]
    t_guess = trace.t[-1] * t_max

    n2 = 2 * model.n_pq
    J0 = jacobian(model, np.zeros(model.n_pq))
    basis = np.eye(n2)
    J_dir = [jacobian(model, to_complex(e)) - J0 for e in basis]
    _, _, vt = np.linalg.svd(jacobian(model, v_guess))
    phi = vt[-1]
    phi0 = phi.copy()
    x = to_real(v_guess)
    t = t_guess
    d_real = to_real(direction)
    s0_real = to_real(s_start)
    for _ in range(100):
        v = to_complex(x)
        J = jacobian(model, v)
        g = np.concatenate([to_real(eval_F(model, v)) - s0_real - t * d_real, J @ phi, [phi0 @ phi - 1.0]])
        if np.max(np.abs(g)) < tol:
            break
        H = np.column_stack([Jk @ phi for Jk in J_dir])
        big = np.zeros((2 * n2 + 1, 2 * n2 + 1))
        big[:n2, :n2] = J
        big[:n2, n2] = -d_real
        big[n2:2 * n2, :n2] = H
        big[n2:2 * n2, n2 + 1:] = J
        big[2 * n2, n2 + 1:] = phi0
        delta = np.linalg.lstsq(big, -g, rcond=None)[0]
        x = x + delta[:n2]
        t = t + delta[n2]
        phi = phi + delta[n2 + 1:]
    v = to_complex(x)
    return v, float(t), float(min_singular_value(model, v))
