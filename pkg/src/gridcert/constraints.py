"""Quadratic constraint functionals over rectangular voltage coordinates.

Every constraint is ``f(x) = constant + linear . x + x' Q x`` with
``x = (Re v; Im v)``. The voltage set is ``{v : f_l(v) > 0 for all l}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import GridModel

MEMBERSHIP_TOL = 1e-8


class Kind(str, Enum):
    V_LOW = "VLow"
    V_UP = "VUp"
    I_BRANCH_SEC = "IBranchSec"
    I_BRANCH_AUX = "IBranchAux"
    I_NODE_AUX = "INodeAux"


AUX_KINDS = (Kind.I_BRANCH_AUX, Kind.I_NODE_AUX)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    constant: float
    linear: np.ndarray = field(repr=False)
    quadratic: np.ndarray = field(repr=False)

    def __post_init__(self):
        q = np.asarray(self.quadratic, dtype=float)
        if q.shape != (self.dim, self.dim):
            raise ValueError("quadratic part has wrong shape")
        if np.max(np.abs(q - q.T), initial=0.0) > 1e-12:
            raise ValueError("quadratic part must be symmetric")

    @property
    def dim(self) -> int:
        return len(self.linear)

    def __call__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        return self.constant + x @ self.linear + np.einsum("...i,ij,...j->...", x, self.quadratic, x)

    def __neg__(self) -> "QuadraticForm":
        return QuadraticForm(-self.constant, -self.linear, -self.quadratic)

    def __add__(self, other) -> "QuadraticForm":
        if isinstance(other, QuadraticForm):
            return QuadraticForm(self.constant + other.constant, self.linear + other.linear, self.quadratic + other.quadratic)
        return QuadraticForm(self.constant + float(other), self.linear, self.quadratic)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, alpha: float) -> "QuadraticForm":
        return QuadraticForm(alpha * self.constant, alpha * self.linear, alpha * self.quadratic)


def complex_row_to_real(row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real rows ``(a, b)`` with ``Re(row . v) = a . x`` and ``Im(row . v) = b . x``."""
    row = np.asarray(row, dtype=complex)
    return np.concatenate([row.real, -row.imag]), np.concatenate([row.imag, row.real])


def modulus_squared(offset: complex, row: np.ndarray) -> QuadraticForm:
    """Quadratic form of ``|offset + row . v|^2``."""
    a, b = complex_row_to_real(row)
    offset = complex(offset)
    return QuadraticForm(
        abs(offset) ** 2,
        2.0 * (offset.real * a + offset.imag * b),
        np.outer(a, a) + np.outer(b, b),
    )


def real_part(offset: complex, row: np.ndarray) -> QuadraticForm:
    a, _ = complex_row_to_real(row)
    return QuadraticForm(complex(offset).real, a, np.zeros((len(a), len(a))))


def imag_part(offset: complex, row: np.ndarray) -> QuadraticForm:
    _, b = complex_row_to_real(row)
    return QuadraticForm(complex(offset).imag, b, np.zeros((len(b), len(b))))


def power_forms(model: GridModel, bus: int) -> tuple[QuadraticForm, QuadraticForm]:
    """``(Re F_j, Im F_j)`` as quadratic forms for PQ bus ``bus`` (1-based)."""
    n = model.n_pq
    j = bus - 1
    # F_j = v_j * conj(r . v + p) with r = Row_j(Y_LL), p = -r . w
    r = model.Y_LL[j]
    p = -complex(r @ model.w)
    aj, bj = complex_row_to_real(np.eye(n)[j])
    ar, br = complex_row_to_real(r)
    # Re F = Re v_j Re u + Im v_j Im u ; Im F = Im v_j Re u - Re v_j Im u, u = r.v + p
    q_re = 0.5 * (np.outer(aj, ar) + np.outer(ar, aj) + np.outer(bj, br) + np.outer(br, bj))
    q_im = 0.5 * (np.outer(bj, ar) + np.outer(ar, bj) - np.outer(aj, br) - np.outer(br, aj))
    lin_re = p.real * aj + p.imag * bj
    lin_im = p.real * bj - p.imag * aj
    return QuadraticForm(0.0, lin_re, q_re), QuadraticForm(0.0, lin_im, q_im)


@dataclass(frozen=True, eq=False)
class SecuritySpec:
    vmin: np.ndarray
    vmax: np.ndarray
    imax: np.ndarray  # aligned with model.pairs

    def __post_init__(self):
        vmin, vmax, imax = (np.asarray(a, dtype=float) for a in (self.vmin, self.vmax, self.imax))
        if np.any(vmin <= 0) or np.any(vmin >= vmax):
            raise InputError("security: need 0 < vmin < vmax at every bus")
        if np.any(imax <= 0):
            raise InputError("security: imax must be positive")
        object.__setattr__(self, "vmin", vmin)
        object.__setattr__(self, "vmax", vmax)
        object.__setattr__(self, "imax", imax)

    @classmethod
    def uniform(cls, model: GridModel, vmin: float, vmax: float, imax: float) -> "SecuritySpec":
        n, e = model.n_pq, len(model.pairs)
        return cls(np.full(n, vmin), np.full(n, vmax), np.full(e, imax))


@dataclass(frozen=True, eq=False)
class AuxBounds:
    beta: float
    i_branch: np.ndarray
    i_node_ref: np.ndarray
    lam: float

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise InputError("beta must lie in (0, 1]")
        if self.lam <= 0:
            raise InputError("lambda must be positive")
        object.__setattr__(self, "i_branch", np.asarray(self.i_branch, dtype=float))
        object.__setattr__(self, "i_node_ref", np.asarray(self.i_node_ref, dtype=float))

    @property
    def i_node(self) -> np.ndarray:
        return self.lam * self.i_node_ref

    @classmethod
    def from_security(cls, security: SecuritySpec, beta: float, i_node_ref, lam: float) -> "AuxBounds":
        ref = np.broadcast_to(np.asarray(i_node_ref, dtype=float), security.vmin.shape).copy()
        return cls(beta, beta * security.imax, ref, lam)


@dataclass(frozen=True)
class Constraint:
    kind: Kind
    owner: int | tuple[int, int]
    form: QuadraticForm = field(repr=False)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Ordered constraints; the first ``n_aux`` entries form the auxiliary block."""

    constraints: tuple[Constraint, ...]
    n_aux: int = 0

    def __len__(self):
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    def __getitem__(self, idx):
        return self.constraints[idx]

    def without_aux(self) -> "ConstraintSet":
        return ConstraintSet(self.constraints[self.n_aux:], 0)

    def aux_only(self) -> "ConstraintSet":
        return ConstraintSet(self.constraints[: self.n_aux], self.n_aux)

    def labels(self) -> list[dict]:
        return [
            {"ell": idx + 1, "kind": c.kind.value, "owner": list(c.owner) if isinstance(c.owner, tuple) else c.owner}
            for idx, c in enumerate(self.constraints)
        ]


def security_forms(model: GridModel, spec: SecuritySpec) -> ConstraintSet:
    n = model.n_pq
    eye = np.eye(n)
    out = []
    for j in range(n):
        out.append(Constraint(Kind.V_LOW, j + 1, modulus_squared(0, eye[j]) - spec.vmin[j] ** 2))
    for j in range(n):
        out.append(Constraint(Kind.V_UP, j + 1, spec.vmax[j] ** 2 - modulus_squared(0, eye[j])))
    for row, imax in zip(model.branch_rows, spec.imax):
        out.append(Constraint(Kind.I_BRANCH_SEC, row.pair, imax**2 - modulus_squared(row.a * model.v0, row.c)))
    return ConstraintSet(tuple(out), 0)


def aux_forms(model: GridModel, aux: AuxBounds) -> ConstraintSet:
    out = []
    for row, bound in zip(model.branch_rows, aux.i_branch):
        out.append(Constraint(Kind.I_BRANCH_AUX, row.pair, bound**2 - modulus_squared(row.a * model.v0, row.c)))
    for j, bound in enumerate(aux.i_node):
        r = model.Y_LL[j]
        out.append(Constraint(Kind.I_NODE_AUX, j + 1, bound**2 - modulus_squared(-(r @ model.w), r)))
    return ConstraintSet(tuple(out), len(out))


def combine(aux: ConstraintSet, security: ConstraintSet) -> ConstraintSet:
    return ConstraintSet(aux.constraints + security.constraints, len(aux))


def eval_constraints(cs: ConstraintSet, v: np.ndarray) -> tuple[np.ndarray, float]:
    """Margins ``f_l(x(v))`` and their minimum (``+inf`` for an empty set)."""
    x = np.concatenate([np.real(v), np.imag(v)], axis=-1)
    margins = np.array([c.form(x) for c in cs.constraints])
    if margins.size == 0:
        return margins, float("inf")
    return margins, float(margins.min())


def eval_constraints_batch(cs: ConstraintSet, v: np.ndarray) -> np.ndarray:
    """Margins for a batch of voltages, shape ``(batch, L)``."""
    v = np.atleast_2d(v)
    x = np.concatenate([v.real, v.imag], axis=-1)
    if not len(cs):
        return np.zeros((x.shape[0], 0))
    return np.stack([c.form(x) for c in cs.constraints], axis=-1)


def strictly_inside(cs: ConstraintSet, v: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
    return eval_constraints(cs, v)[1] > tol


# --- JSON -----------------------------------------------------------------

_SECURITY_KEYS = {"vmin", "vmax", "imax"}


def _per_bus(value, n, where):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(n, float(value))
    if isinstance(value, list) and len(value) == n:
        return np.array([float(x) for x in value])
    raise InputError(f"{where}: expected a number or a list of {n} numbers")


def security_from_dict(data: dict, model: GridModel) -> SecuritySpec:
    if not isinstance(data, dict):
        raise InputError("security: top level must be an object")
    extra = set(data) - _SECURITY_KEYS
    if extra:
        raise InputError(f"security: unknown field(s) {sorted(extra)}")
    for key in _SECURITY_KEYS:
        if key not in data:
            raise InputError(f"security: missing field '{key}'")
    n = model.n_pq
    vmin = _per_bus(data["vmin"], n, "security.vmin")
    vmax = _per_bus(data["vmax"], n, "security.vmax")
    pairs = model.pairs
    raw = data["imax"]
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        imax = np.full(len(pairs), float(raw))
    elif isinstance(raw, list):
        given = {}
        for idx, entry in enumerate(raw):
            where = f"security.imax[{idx}]"
            if not isinstance(entry, dict) or set(entry) != {"from", "to", "value"}:
                raise InputError(f"{where}: expected {{'from', 'to', 'value'}}")
            given[(int(entry["from"]), int(entry["to"]))] = float(entry["value"])
        unknown = set(given) - set(pairs)
        if unknown:
            raise InputError(f"security.imax: pairs {sorted(unknown)} are not branches")
        imax = []
        for j, k in pairs:
            if (j, k) in given:
                imax.append(given[(j, k)])
            elif (k, j) in given:
                imax.append(given[(k, j)])
            else:
                raise InputError(f"security.imax: no bound for branch {j}-{k}")
        imax = np.array(imax)
    else:
        raise InputError("security.imax: expected a number or a list of entries")
    return SecuritySpec(vmin, vmax, imax)


def security_to_dict(spec: SecuritySpec, model: GridModel) -> dict:
    return {
        "vmin": spec.vmin.tolist(),
        "vmax": spec.vmax.tolist(),
        "imax": [{"from": j, "to": k, "value": float(x)} for (j, k), x in zip(model.pairs, spec.imax)],
    }


def load_security(path, model: GridModel) -> SecuritySpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return security_from_dict(data, model)


def load_inode_ref(path, n_pq: int) -> np.ndarray:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict) or set(data) != {"i_node_ref"}:
        raise InputError("i_node_ref file: expected exactly {'i_node_ref': ...}")
    ref = _per_bus(data["i_node_ref"], n_pq, "i_node_ref")
    if np.any(ref <= 0):
        raise InputError("i_node_ref: values must be positive")
    return ref

