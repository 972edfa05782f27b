"""Brute-force checks that share no code path with the conic machinery.

Everything here uses plain Newton iterations, closed forms and random
sampling. The routines cannot prove anything; they look for
counterexamples to the certified claims and supply ground-truth values
for the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import uncertainty as unc
from .constraints import ConstraintSet, SecuritySpec, eval_constraints_batch, security_forms
from .errors import PathLost
from .grid import GridModel
from .loadflow import (
    SIGMA_TOL,
    continuation_trace,
    eval_F,
    min_singular_value,
    newton_batch,
    to_real,
)

VIOLATION_MARGIN = -1e-8
CLUSTER_TOL = 1e-6
SOLUTION_RESIDUAL = 1e-9


# --- solution enumeration -------------------------------------------------


def scalar_solutions(y: complex, w: complex, s: complex, tol: float = 1e-13) -> list[complex]:
    """All ``v`` with ``v * conj(y (v - w)) = s`` (closed form, ``w != 0``)."""
    if w == 0:
        raise ValueError("closed form needs a nonzero zero-load voltage")
    sigma = complex(s) / np.conj(complex(y))
    b = 2 * sigma.real + abs(w) ** 2
    disc = b * b - 4 * abs(sigma) ** 2
    if disc < -tol * max(1.0, b * b):
        return []
    root = np.sqrt(max(disc, 0.0))
    rhos = {0.5 * (b + root), 0.5 * (b - root)} if root > 0 else {0.5 * b}
    return [(rho - sigma) / np.conj(w) for rho in sorted(rhos) if rho >= -tol]


def _cluster(points: np.ndarray, tol: float = CLUSTER_TOL) -> np.ndarray:
    kept: list = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in kept):
            kept.append(p)
    if not kept:
        return np.zeros((0, points.shape[1] if points.ndim == 2 else 0), dtype=complex)
    kept = np.array(kept)
    order = np.lexsort(np.vstack([kept.imag[:, ::-1].T, kept.real[:, ::-1].T])[::-1])
    return kept[order]


def _start_grid(n: int = 50, half_width: float = 1.5) -> np.ndarray:
    g = np.linspace(-half_width, half_width, n)
    re, im = np.meshgrid(g, g)
    return (re + 1j * im).ravel()


def _polish(model, s, candidates):
    if len(candidates) == 0:
        return np.zeros((0, model.n_pq), dtype=complex)
    v, ok = newton_batch(model, s, candidates, max_iter=20)
    v = v[ok]
    res = np.max(np.abs(eval_F(model, v) - s), axis=1) if len(v) else np.zeros(0)
    return _cluster(v[res <= SOLUTION_RESIDUAL])


def _two_bus_eliminated(model: GridModel, s: np.ndarray, grid: int, half_width: float) -> np.ndarray:
    Y, w = model.Y_LL, model.w
    s1, s2 = s

    def v2_of(v1):
        return w[1] + (np.conj(s1) / np.conj(v1) - Y[0, 0] * (v1 - w[0])) / Y[0, 1]

    def g(v1):
        v = np.stack([v1, v2_of(v1)], axis=-1)
        return eval_F(model, v)[..., 1] - s2

    v1 = _start_grid(grid, half_width)
    v1 = v1[np.abs(v1) > 1e-9]
    h = 1e-7
    for _ in range(60):
        g0 = g(v1)
        gx = (g(v1 + h) - g0) / h
        gy = (g(v1 + 1j * h) - g0) / h
        det = gx.real * gy.imag - gy.real * gx.imag
        ok = np.abs(det) > 1e-14
        dx = np.where(ok, (-g0.real * gy.imag + gy.real * g0.imag) / np.where(ok, det, 1), 0)
        dy = np.where(ok, (-gx.real * g0.imag + gx.imag * g0.real) / np.where(ok, det, 1), 0)
        v1 = v1 + dx + 1j * dy
        v1 = v1[np.isfinite(v1) & (np.abs(v1) > 1e-12) & (np.abs(v1) < 1e3)]
    cands = np.stack([v1, v2_of(v1)], axis=-1)
    return cands[np.all(np.isfinite(cands), axis=1)]


def enumerate_solutions_small(model: GridModel, s, grid: int = 50, half_width: float = 1.5) -> np.ndarray:
    """Every load-flow solution for ``N <= 2``, shape ``(k, N)``.

    One bus: closed form. Two buses: the first equation gives ``v2`` as a
    function of ``v1``, and a dense grid of ``v1`` starts solves the
    remaining complex equation. Decoupled buses and ``v1 = 0`` (possible
    when ``s1 = 0``) are treated in closed form.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    N = model.n_pq
    Y, w = model.Y_LL, model.w
    if N == 1:
        return _cluster(np.array([[v] for v in scalar_solutions(Y[0, 0], w[0], s[0])], dtype=complex).reshape(-1, 1))
    if N != 2:
        raise ValueError("exhaustive enumeration is limited to N <= 2")
    if abs(Y[0, 1]) == 0 and abs(Y[1, 0]) == 0:
        out = [[a, b] for a in scalar_solutions(Y[0, 0], w[0], s[0]) for b in scalar_solutions(Y[1, 1], w[1], s[1])]
        return _cluster(np.array(out, dtype=complex).reshape(-1, 2))
    cands = [_two_bus_eliminated(model, s, grid, half_width)]
    if abs(s[0]) <= 1e-14:
        w2 = w[1] + Y[1, 0] * w[0] / Y[1, 1]
        cands.append(np.array([[0.0, b] for b in scalar_solutions(Y[1, 1], w2, s[1])], dtype=complex).reshape(-1, 2))
    return _polish(model, s, np.concatenate(cands))


def multistart_solutions(model: GridModel, s, n_starts: int = 4000, radius: float = 1.5, seed: int | None = 0, extra=None) -> np.ndarray:
    """Solutions reached by Newton from random starts around the zero-load voltage.

    Complete only in a probabilistic sense; used for ``N > 2``.
    """
    rng = np.random.default_rng(seed)
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    N = model.n_pq
    r = radius * np.sqrt(rng.random((n_starts, N)))
    starts = model.w + r * np.exp(2j * np.pi * rng.random((n_starts, N)))
    if extra is not None:
        starts = np.concatenate([np.atleast_2d(extra), starts])
    return _polish(model, s, starts)


def all_solutions(model, s, seed=0) -> np.ndarray:
    if model.n_pq <= 2:
        return enumerate_solutions_small(model, s)
    return multistart_solutions(model, s, seed=seed)


# --- sampling voltage sets ------------------------------------------------


def exit_distance(cs: ConstraintSet, centre: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance along each real direction until the first constraint reaches zero.

    Returns ``(t, index)``; ``t`` is ``inf`` when no constraint closes the ray.
    Every constraint is quadratic, so each exit is a closed-form root.
    """
    c = to_real(np.asarray(centre, dtype=complex))
    d = np.atleast_2d(directions)
    best = np.full(d.shape[0], np.inf)
    which = np.full(d.shape[0], -1)
    for idx, con in enumerate(cs):
        f = con.form
        C = float(f(c))
        B = d @ f.linear + 2.0 * d @ (f.quadratic @ c)
        A = np.einsum("bi,ij,bj->b", d, f.quadratic, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = B * B - 4 * A * C
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            r1 = np.where(np.abs(A) > 1e-15, (-B - sq) / (2 * A), np.where(B < 0, -C / B, np.inf))
            r2 = np.where(np.abs(A) > 1e-15, (-B + sq) / (2 * A), np.inf)
        roots = np.stack([r1, r2])
        roots = np.where(np.isfinite(roots) & (roots > 0), roots, np.inf)
        t = roots.min(axis=0)
        upd = t < best
        best[upd] = t[upd]
        which[upd] = idx
    return best, which


def sample_inside(cs: ConstraintSet, n: int, centre, seed: int | None = 0) -> np.ndarray:
    """Points of a star-shaped constraint set around ``centre`` (uniform radius per ray)."""
    rng = np.random.default_rng(seed)
    centre = np.asarray(centre, dtype=complex)
    dim = 2 * len(centre)
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t, _ = exit_distance(cs, centre, d)
    if not np.all(np.isfinite(t)):
        raise ValueError("constraint set is unbounded along some sampled ray")
    x = to_real(centre) + (t * rng.random(n) ** (1.0 / dim))[:, None] * d
    return x[:, : len(centre)] + 1j * x[:, len(centre):]


# --- admissibility by simulation ------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: int
    t: float
    kind: str  # "margin" | "singular" | "PathLost"
    value: float
    constraint: int | None = None
    s: tuple = ()
    v: tuple = ()

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "t": self.t,
            "kind": self.kind,
            "value": self.value,
            "constraint": self.constraint,
            "s": [[z.real, z.imag] for z in self.s],
            "v": [[z.real, z.imag] for z in self.v],
        }


def _random_point(uset: unc.UncertaintySet, rng) -> np.ndarray:
    out = np.empty(uset.n_pq, dtype=complex)
    for j, region in enumerate(uset.regions):
        verts = region.vertices()
        if len(verts) == 1:
            out[j] = verts[0]
        elif rng.random() < 0.5:
            out[j] = verts[rng.integers(len(verts))]
        else:
            out[j] = rng.dirichlet(np.ones(len(verts))) @ verts
    return out


def random_paths(uset, s0, n_paths: int, n_waypoints: int, seed: int) -> np.ndarray:
    """Waypoints ``(n_paths, n_waypoints + 1, N)``; path ``p`` uses its own seeded stream."""
    out = np.empty((n_paths, n_waypoints + 1, uset.n_pq), dtype=complex)
    for p in range(n_paths):
        rng = np.random.default_rng([seed, p])
        out[p, 0] = s0
        for k in range(1, n_waypoints + 1):
            out[p, k] = _random_point(uset, rng)
    return out


def _path_points(waypoints: np.ndarray, t: float) -> np.ndarray:
    K = waypoints.shape[1] - 1
    seg = min(int(np.floor(t * K)), K - 1)
    local = t * K - seg
    return (1 - local) * waypoints[:, seg] + local * waypoints[:, seg + 1]


def simulate_paths(model, v_initial, waypoints, n_steps: int, continuity_bound: float = 0.1):
    """Track every path; returns ``(t, states, lost)`` with ``states`` of shape ``(P, n_steps+1, N)``.

    All paths advance together with batched Newton; a path whose batch step
    fails or jumps is re-run by the bisecting scalar tracker. ``lost`` maps a
    path index to the PathLost error.
    """
    P = waypoints.shape[0]
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    states = np.empty((P, n_steps + 1, model.n_pq), dtype=complex)
    states[:, 0] = v_initial
    fallback = np.zeros(P, dtype=bool)
    v = np.tile(np.asarray(v_initial, dtype=complex), (P, 1))
    for k, t in enumerate(ts[1:], start=1):
        s_t = _path_points(waypoints, t)
        v_new, ok = newton_batch(model, s_t, v, max_iter=20)
        ok &= np.max(np.abs(v_new - v), axis=1) <= continuity_bound
        fallback |= ~ok
        v = np.where(ok[:, None], v_new, v)
        states[:, k] = v
    lost = {}
    for p in np.flatnonzero(fallback):
        try:
            tr = continuation_trace(model, waypoints[p], v_initial, steps=n_steps, continuity_bound=continuity_bound)
            states[p] = tr.v
        except PathLost as exc:
            lost[int(p)] = exc
    return ts, states, lost


def brute_force_admissibility(
    model: GridModel,
    security: SecuritySpec,
    v_initial,
    uset: unc.UncertaintySet,
    n_paths: int = 200,
    n_steps: int = 100,
    seed: int = 0,
    n_waypoints: int = 3,
    sigma_tol: float = SIGMA_TOL,
    traces: list | None = None,
) -> list[Violation]:
    """Simulate random injection paths from ``F(v_initial)`` and report bad states.

    One entry per offending path: the first state with a security margin
    below -1e-8 or a singular Jacobian, or the point where tracking failed.
    """
    v_initial = np.asarray(v_initial, dtype=complex)
    s0 = eval_F(model, v_initial)
    waypoints = random_paths(uset, s0, n_paths, n_waypoints, seed)
    ts, states, lost = simulate_paths(model, v_initial, waypoints, n_steps)
    sec = security_forms(model, security)
    flat = states.reshape(-1, model.n_pq)
    margins = eval_constraints_batch(sec, flat).reshape(n_paths, n_steps + 1, -1)
    sigma = min_singular_value(model, flat).reshape(n_paths, n_steps + 1)
    out = []
    for p in range(n_paths):
        if traces is not None:
            traces.append((ts, np.array([_path_points(waypoints[p:p + 1], t)[0] for t in ts]), states[p]))
        if p in lost:
            exc = lost[p]
            out.append(Violation(p, exc.t_last_good, "PathLost", exc.t_last_good))
            continue
        worst = margins[p].min(axis=1)
        bad_m = np.flatnonzero(worst < VIOLATION_MARGIN)
        bad_s = np.flatnonzero(sigma[p] <= sigma_tol)
        k_m = bad_m[0] if len(bad_m) else None
        k_s = bad_s[0] if len(bad_s) else None
        if k_m is None and k_s is None:
            continue
        s_k = lambda k: tuple(_path_points(waypoints[p:p + 1], ts[k])[0])
        if k_s is None or (k_m is not None and k_m <= k_s):
            out.append(Violation(p, float(ts[k_m]), "margin", float(worst[k_m]), int(margins[p, k_m].argmin()), s_k(k_m), tuple(states[p, k_m])))
        else:
            out.append(Violation(p, float(ts[k_s]), "singular", float(sigma[p, k_s]), None, s_k(k_s), tuple(states[p, k_s])))
    return out


# --- boundary probe -------------------------------------------------------


def _injection_violation(uset: unc.UncertaintySet, s: np.ndarray) -> np.ndarray:
    """Largest normalised distance outside the uncertainty set, batched (0 inside)."""
    s = np.atleast_2d(s)
    worst = np.zeros(s.shape[0])
    for j, region in enumerate(uset.regions):
        if isinstance(region, unc.Singleton):
            worst = np.maximum(worst, np.abs(s[:, j] - region.point))
        else:
            hp = region.half_planes
            norm = np.hypot(hp[:, 0], hp[:, 1])
            slack = (np.outer(s[:, j].real, hp[:, 0]) + np.outer(s[:, j].imag, hp[:, 1]) - hp[:, 2]) / norm
            worst = np.maximum(worst, np.maximum(slack.max(axis=1), 0.0))
    return worst


@dataclass(frozen=True)
class BoundaryHit:
    ell: int  # 1-based constraint index
    v: tuple
    s: tuple
    distance: float

    def to_dict(self) -> dict:
        return {
            "ell": self.ell,
            "v": [[z.real, z.imag] for z in self.v],
            "s": [[z.real, z.imag] for z in self.s],
            "distance": self.distance,
        }


def boundary_probe(
    model: GridModel,
    cs: ConstraintSet,
    uset: unc.UncertaintySet,
    n_samples: int = 100_000,
    seed: int = 0,
    focus: int | None = None,
    centre=None,
    refine: int = 20,
    hit_tol: float = 1e-7,
) -> list[BoundaryHit]:
    """Look for boundary voltages whose injection lies in the uncertainty set.

    Random rays from ``centre`` (default: the zero-load voltage) give points
    where one constraint vanishes and the others are nonnegative. The
    ``refine`` samples with the smallest injection distance are then moved
    along their boundary piece by a local constrained minimisation. A hit
    is a boundary point whose injection is within ``hit_tol`` of the set.
    ``focus`` (1-based) keeps only rays that leave through that constraint.
    """
    rng = np.random.default_rng(seed)
    centre = model.w if centre is None else np.asarray(centre, dtype=complex)
    N = model.n_pq
    if eval_constraints_batch(cs, centre[None, :]).min() <= 0:
        raise ValueError("probe centre must lie strictly inside the voltage set")
    xs, ells = [], []
    need, rounds = n_samples, 0
    while need > 0 and rounds < 50:
        d = rng.standard_normal((min(need, 50_000), 2 * N))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t, which = exit_distance(cs, centre, d)
        keep = np.isfinite(t)
        if focus is not None:
            keep &= which == focus - 1
        xs.append(to_real(centre) + t[keep, None] * d[keep])
        ells.append(which[keep])
        need -= int(keep.sum()) if focus is not None else len(d)
        rounds += 1
    x = np.concatenate(xs) if xs else np.zeros((0, 2 * N))
    which = np.concatenate(ells) if ells else np.zeros(0, dtype=int)
    if len(x) == 0:
        return []
    v = x[:, :N] + 1j * x[:, N:]
    dist = _injection_violation(uset, eval_F(model, v))

    hits = []
    for i in np.flatnonzero(dist <= hit_tol):
        hits.append(BoundaryHit(int(which[i]) + 1, tuple(v[i]), tuple(eval_F(model, v[i])), float(dist[i])))
    for i in np.argsort(dist)[:refine]:
        if dist[i] <= hit_tol:
            continue
        hit = _refine_boundary_point(model, cs, uset, int(which[i]), x[i], hit_tol)
        if hit is not None:
            hits.append(hit)
    return hits


def _squared_violation(uset, s: np.ndarray) -> float:
    total = 0.0
    for j, region in enumerate(uset.regions):
        if isinstance(region, unc.Singleton):
            total += abs(s[j] - region.point) ** 2
        else:
            hp = region.half_planes
            slack = (hp[:, 0] * s[j].real + hp[:, 1] * s[j].imag - hp[:, 2]) / np.hypot(hp[:, 0], hp[:, 1])
            total += float(np.sum(np.maximum(slack, 0.0) ** 2))
    return total


def _refine_boundary_point(model, cs, uset, ell_idx, x0, hit_tol):
    N = model.n_pq
    forms = [c.form for c in cs]
    lin = np.array([f.linear for f in forms])
    quad = np.array([f.quadratic for f in forms])
    const = np.array([f.constant for f in forms])
    others = np.array([k for k in range(len(forms)) if k != ell_idx], dtype=int)

    def values(x):
        return const + lin @ x + np.einsum("kij,i,j->k", quad, x, x)

    def grads(x):
        return lin + 2.0 * quad @ x

    def to_v(x):
        return x[:N] + 1j * x[N:]

    cons = [
        {"type": "eq", "fun": lambda x: values(x)[ell_idx : ell_idx + 1], "jac": lambda x: grads(x)[ell_idx : ell_idx + 1]},
    ]
    if len(others):
        cons.append({"type": "ineq", "fun": lambda x: values(x)[others], "jac": lambda x: grads(x)[others]})
    try:
        res = minimize(
            lambda x: _squared_violation(uset, eval_F(model, to_v(x))),
            x0,
            method="SLSQP",
            constraints=cons,
            options={"maxiter": 100, "ftol": 1e-20},
        )
    except (ValueError, np.linalg.LinAlgError):
        return None
    x = res.x
    if not np.all(np.isfinite(x)):
        return None
    vals = values(x)
    if abs(vals[ell_idx]) > 1e-9 or (len(others) and vals[others].min() < -1e-9):
        return None
    v = to_v(x)
    s = eval_F(model, v)
    dist = float(_injection_violation(uset, s[None, :])[0])
    if dist > hit_tol:
        return None
    return BoundaryHit(ell_idx + 1, tuple(v), tuple(s), dist)


# --- uniqueness probe -----------------------------------------------------


@dataclass(frozen=True)
class Collision:
    s: tuple
    v_a: tuple
    v_b: tuple

    def to_dict(self) -> dict:
        enc = lambda zs: [[z.real, z.imag] for z in zs]
        return {"s": enc(self.s), "v_a": enc(self.v_a), "v_b": enc(self.v_b)}


def uniqueness_probe(model: GridModel, cs: ConstraintSet, trials: int = 500, seed: int = 0, centre=None, margin: float = -1e-9) -> list[Collision]:
    """Pick ``v`` in the set, enumerate every solution for ``F(v)``, and report pairs inside.

    A point counts as inside when all margins exceed ``margin`` (slightly
    negative, so near-boundary pairs are reported rather than missed).
    """
    centre = model.w if centre is None else np.asarray(centre, dtype=complex)
    vs = sample_inside(cs, trials, centre, seed)
    out = []
    for k, v in enumerate(vs):
        s = eval_F(model, v)
        sols = all_solutions(model, s, seed=seed + k)
        if len(sols) < 2:
            continue
        inside = sols[eval_constraints_batch(cs, sols).min(axis=1) > margin]
        if len(inside) >= 2:
            out.append(Collision(tuple(s), tuple(inside[0]), tuple(inside[1])))
    return out
