"""Per-bus uncertainty regions in the complex power plane.

A region is either a single point or a convex polygon stored as half-planes
``alpha * Re(s) + beta * Im(s) <= gamma``. The uncertainty set is the
Cartesian product of the per-bus regions, hence convex and path-connected.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import EmptyRegion, InputError, UnboundedRegion, UnsupportedUncertainty
from .grid import complex_to_json, parse_complex

CONTAINS_TOL = 1e-9


@dataclass(frozen=True)
class Singleton:
    point: complex

    def contains(self, s: complex, tol: float = CONTAINS_TOL) -> bool:
        return abs(complex(s) - self.point) <= tol

    def vertices(self) -> np.ndarray:
        return np.array([self.point])


@dataclass(frozen=True, eq=False)
class Polygon:
    half_planes: np.ndarray = field()  # rows (alpha, beta, gamma)

    def __post_init__(self):
        hp = np.atleast_2d(np.asarray(self.half_planes, dtype=float))
        if hp.shape[1] != 3 or hp.shape[0] == 0:
            raise UnsupportedUncertainty("polygon needs rows (alpha, beta, gamma)")
        if np.any(np.hypot(hp[:, 0], hp[:, 1]) == 0):
            raise UnsupportedUncertainty("half-plane with (alpha, beta) = (0, 0)")
        if not np.all(np.isfinite(hp)):
            raise UnsupportedUncertainty("non-finite half-plane data")
        object.__setattr__(self, "half_planes", hp)

    def contains(self, s: complex, tol: float = CONTAINS_TOL) -> bool:
        s = complex(s)
        hp = self.half_planes
        norm = np.hypot(hp[:, 0], hp[:, 1])
        slack = (hp[:, 0] * s.real + hp[:, 1] * s.imag - hp[:, 2]) / norm
        return bool(np.all(slack <= tol))

    def check(self):
        """Raise EmptyRegion / UnboundedRegion using LP probes along both axes."""
        A, b = self.half_planes[:, :2], self.half_planes[:, 2]
        for c in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
            if res.status == 2:
                raise EmptyRegion("polygon has no feasible point")
            if res.status == 3:
                raise UnboundedRegion("polygon is unbounded")
            if res.status != 0:
                raise UnsupportedUncertainty(f"LP probe failed: {res.message}")

    def vertices(self) -> np.ndarray:
        """Vertices as complex numbers, counter-clockwise."""
        hp = self.half_planes
        pts = []
        for i, k in itertools.combinations(range(len(hp)), 2):
            M = hp[[i, k], :2]
            if abs(np.linalg.det(M)) < 1e-14:
                continue
            p = np.linalg.solve(M, hp[[i, k], 2])
            if self.contains(complex(p[0], p[1]), tol=1e-9):
                pts.append(complex(p[0], p[1]))
        if not pts:
            return np.array([], dtype=complex)
        uniq = []
        for p in pts:
            if all(abs(p - q) > 1e-10 for q in uniq):
                uniq.append(p)
        uniq = np.array(uniq)
        centre = uniq.mean()
        return uniq[np.argsort(np.angle(uniq - centre))]


PowerRegion = Singleton | Polygon


@dataclass(frozen=True)
class UncertaintySet:
    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        for r in self.regions:
            if not isinstance(r, (Singleton, Polygon)):
                raise UnsupportedUncertainty(f"region type {type(r).__name__} is not a polygon or singleton")

    @property
    def n_pq(self) -> int:
        return len(self.regions)

    @classmethod
    def box(cls, lower, upper) -> "UncertaintySet":
        """Product of axis-aligned boxes ``lower_j <= s_j <= upper_j`` (componentwise)."""
        regions = []
        for lo, hi in zip(np.atleast_1d(lower), np.atleast_1d(upper)):
            lo, hi = complex(lo), complex(hi)
            if lo == hi:
                regions.append(Singleton(lo))
                continue
            regions.append(
                Polygon(
                    [
                        [1.0, 0.0, hi.real],
                        [-1.0, 0.0, -lo.real],
                        [0.0, 1.0, hi.imag],
                        [0.0, -1.0, -lo.imag],
                    ]
                )
            )
        return cls(tuple(regions))

    @classmethod
    def singleton(cls, s) -> "UncertaintySet":
        return cls(tuple(Singleton(complex(x)) for x in np.atleast_1d(s)))


def validate(uset: UncertaintySet) -> None:
    """Raise if some region is empty or unbounded; returns None when valid.

    Connectedness needs no numerical check: a product of convex sets is
    path-connected.
    """
    for r in uset.regions:
        if isinstance(r, Polygon):
            r.check()


def validation_reasons(uset: UncertaintySet) -> list[str]:
    reasons = []
    for j, r in enumerate(uset.regions, start=1):
        if isinstance(r, Polygon):
            try:
                r.check()
            except (EmptyRegion, UnboundedRegion, UnsupportedUncertainty) as exc:
                reasons.append(f"bus {j}: {exc}")
    return reasons


def contains(uset: UncertaintySet, s: np.ndarray, tol: float = CONTAINS_TOL) -> bool:
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    if len(s) != uset.n_pq:
        raise ValueError("injection vector length does not match the uncertainty set")
    return all(r.contains(x, tol) for r, x in zip(uset.regions, s))


def sample(uset: UncertaintySet, n: int, seed: int | None = 0) -> np.ndarray:
    """``n`` injection vectors inside the set, shape ``(n, N)``.

    The leading samples cycle through every vertex of every polygon; the
    rest are random convex combinations of vertices.
    """
    rng = np.random.default_rng(seed)
    verts = [r.vertices() for r in uset.regions]
    n_cover = max(len(v) for v in verts)
    out = np.empty((n, uset.n_pq), dtype=complex)
    for i in range(n):
        for j, vj in enumerate(verts):
            if i < n_cover:
                out[i, j] = vj[i % len(vj)]
            elif len(vj) == 1:
                out[i, j] = vj[0]
            else:
                weights = rng.dirichlet(np.ones(len(vj)))
                out[i, j] = weights @ vj
    return out


@dataclass(frozen=True)
class KappaTemplate:
    """Region family whose offsets grow with a scalar: ``gamma = gamma0 + kappa * gamma1``.

    ``rows[j]`` is either a complex point (fixed singleton) or an array with
    rows ``(alpha, beta, gamma0, gamma1)``.
    """

    rows: tuple

    def at(self, kappa: float) -> UncertaintySet:
        regions = []
        for r in self.rows:
            if isinstance(r, Singleton):
                regions.append(r)
            else:
                r = np.asarray(r, dtype=float)
                regions.append(Polygon(np.column_stack([r[:, 0], r[:, 1], r[:, 2] + kappa * r[:, 3]])))
        return UncertaintySet(tuple(regions))

    @classmethod
    def box(cls, re_lo, re_hi, im_lo, im_hi) -> "KappaTemplate":
        """Boxes whose bounds are ``kappa * bound``; arguments per bus."""
        rows = []
        for a, b, c, d in zip(*(np.atleast_1d(x) for x in (re_lo, re_hi, im_lo, im_hi))):
            rows.append(np.array([[1.0, 0.0, 0.0, b], [-1.0, 0.0, 0.0, -a], [0.0, 1.0, 0.0, d], [0.0, -1.0, 0.0, -c]]))
        return cls(tuple(rows))


# --- JSON -----------------------------------------------------------------


def _region_from_dict(entry, where, template):
    if not isinstance(entry, dict):
        raise InputError(f"{where}: expected object")
    if set(entry) == {"point"}:
        return Singleton(parse_complex(entry["point"], f"{where}.point"))
    if set(entry) == {"half_planes"}:
        rows = entry["half_planes"]
        if not isinstance(rows, list) or not rows:
            raise InputError(f"{where}.half_planes: expected a non-empty list")
        width = {len(r) for r in rows}
        try:
            arr = np.array(rows, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}.half_planes: non-numeric entry") from exc
        if template:
            if width == {3}:
                arr = np.column_stack([arr[:, :2], np.zeros(len(arr)), arr[:, 2]])
            elif width != {4}:
                raise InputError(f"{where}.half_planes: template rows need 3 or 4 numbers")
            return arr
        if width != {3}:
            raise InputError(f"{where}.half_planes: rows must be [alpha, beta, gamma]")
        try:
            return Polygon(arr)
        except UnsupportedUncertainty as exc:
            raise InputError(f"{where}: {exc}") from exc
    raise InputError(f"{where}: expected exactly one of 'point' or 'half_planes'")


def uncertainty_from_dict(data: dict, n_pq: int | None = None):
    """Parse an uncertainty file; returns UncertaintySet or KappaTemplate."""
    if not isinstance(data, dict):
        raise InputError("uncertainty: top level must be an object")
    extra = set(data) - {"buses", "kappa_template"}
    if extra:
        raise InputError(f"uncertainty: unknown field(s) {sorted(extra)}")
    if "buses" not in data or not isinstance(data["buses"], list):
        raise InputError("uncertainty: missing list field 'buses'")
    template = bool(data.get("kappa_template", False))
    buses = data["buses"]
    if n_pq is not None and len(buses) != n_pq:
        raise InputError(f"uncertainty: expected {n_pq} buses, got {len(buses)}")
    regions = tuple(_region_from_dict(b, f"uncertainty.buses[{i}]", template) for i, b in enumerate(buses))
    if template:
        return KappaTemplate(regions)
    return UncertaintySet(regions)


def uncertainty_to_dict(uset: UncertaintySet) -> dict:
    buses = []
    for r in uset.regions:
        if isinstance(r, Singleton):
            buses.append({"point": complex_to_json(r.point)})
        else:
            buses.append({"half_planes": r.half_planes.tolist()})
    return {"buses": buses}


def load_uncertainty(path, n_pq: int | None = None):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return uncertainty_from_dict(data, n_pq)
