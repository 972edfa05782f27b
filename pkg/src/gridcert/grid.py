"""Single-phase grid model: admittance matrix, partition, zero-load voltages
and the affine branch-current rows ``i_jk = a_jk * v0 + c_jk . v``.

All quantities are per unit; no base conversion happens here.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DisconnectedNetwork, DuplicateBranch, InputError, SingularYLL, UnknownBranch

SINGULARITY_TOL = 1e-9


@dataclass(frozen=True)
class BranchSpec:
    """Pi-modelled branch; the optional ideal transformer sits at the ``from`` end."""

    from_bus: int
    to_bus: int
    y_series: complex
    b_shunt: float = 0.0
    tap: float | None = None

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise InputError(f"branch {self.from_bus}-{self.to_bus}: from == to")
        if not np.isfinite(complex(self.y_series)) or complex(self.y_series) == 0:
            raise InputError(f"branch {self.from_bus}-{self.to_bus}: series admittance must be finite and nonzero")
        if not np.isfinite(self.b_shunt) or self.b_shunt < 0:
            raise InputError(f"branch {self.from_bus}-{self.to_bus}: shunt susceptance must be >= 0")
        if self.tap is not None and (not np.isfinite(self.tap) or self.tap <= 0):
            raise InputError(f"branch {self.from_bus}-{self.to_bus}: tap ratio must be positive")

    def primitive(self) -> np.ndarray:
        """2x2 primitive admittance mapping (v_from, v_to) to (i_from_to, i_to_from)."""
        y = complex(self.y_series)
        half = 0.5j * self.b_shunt
        t = 1.0 if self.tap is None else float(self.tap)
        return np.array([[(y + half) / t**2, -y / t], [-y / t, y + half]], dtype=complex)


@dataclass(frozen=True)
class BranchRow:
    pair: tuple[int, int]
    a: complex
    c: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class GridModel:
    n_pq: int
    v0: complex
    branches: tuple[BranchSpec, ...]
    Y: np.ndarray = field(repr=False)
    Y_LL: np.ndarray = field(repr=False)
    Y_L0: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    branch_rows: tuple[BranchRow, ...] = field(repr=False)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Directed branch pairs in the fixed ordering used throughout."""
        return [row.pair for row in self.branch_rows]

    @property
    def Y_LL_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Y_LL)

    def neighbours(self, bus: int) -> list[int]:
        out = set()
        for b in self.branches:
            if b.from_bus == bus:
                out.add(b.to_bus)
            elif b.to_bus == bus:
                out.add(b.from_bus)
        return sorted(out)

    def branch_current(self, v: np.ndarray, pair: tuple[int, int]) -> complex:
        a, c = branch_current_coeffs(self, pair)
        return a * self.v0 + c @ np.asarray(v)

    def nodal_current(self, v: np.ndarray) -> np.ndarray:
        return self.Y_LL @ (np.asarray(v) - self.w)


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def build_grid(branches: Sequence[BranchSpec], n_pq: int, v0: complex = 1.0) -> GridModel:
    """Assemble a :class:`GridModel` from branch primitives.

    Raises DisconnectedNetwork, SingularYLL or DuplicateBranch when the data
    cannot describe a valid grid.
    """
    if n_pq < 1:
        raise InputError("n_pq must be >= 1")
    branches = tuple(branches)
    n_bus = n_pq + 1
    seen = set()
    for b in branches:
        for bus in (b.from_bus, b.to_bus):
            if not 0 <= bus < n_bus:
                raise InputError(f"bus index {bus} outside 0..{n_pq}")
        key = frozenset((b.from_bus, b.to_bus))
        if key in seen:
            raise DuplicateBranch(f"more than one branch between buses {b.from_bus} and {b.to_bus}")
        seen.add(key)

    adj = {j: [] for j in range(n_bus)}
    for b in branches:
        adj[b.from_bus].append(b.to_bus)
        adj[b.to_bus].append(b.from_bus)
    reached = {0}
    queue = deque([0])
    while queue:
        j = queue.popleft()
        for k in adj[j]:
            if k not in reached:
                reached.add(k)
                queue.append(k)
    if len(reached) != n_bus:
        missing = sorted(set(range(n_bus)) - reached)
        raise DisconnectedNetwork(f"buses {missing} are not connected to the slack bus")

    Y = np.zeros((n_bus, n_bus), dtype=complex)
    rows = []
    for b in branches:
        prim = b.primitive()
        f, t = b.from_bus, b.to_bus
        Y[np.ix_([f, t], [f, t])] += prim
        for (src, dst), coeff_row in (((f, t), prim[0]), ((t, f), prim[1])):
            # coeff_row multiplies (v_from, v_to)
            full = np.zeros(n_bus, dtype=complex)
            full[f] += coeff_row[0]
            full[t] += coeff_row[1]
            rows.append(BranchRow((src, dst), complex(full[0]), _readonly(full[1:])))

    Y_LL = Y[1:, 1:]
    Y_L0 = Y[1:, 0]
    sv = np.linalg.svd(Y_LL, compute_uv=False)
    if sv[-1] <= SINGULARITY_TOL * sv[0]:
        raise SingularYLL(f"Y_LL smallest singular value {sv[-1]:.3e} is below tolerance")
    v0 = complex(v0)
    w = -np.linalg.solve(Y_LL, Y_L0 * v0)
    return GridModel(
        n_pq=n_pq,
        v0=v0,
        branches=branches,
        Y=_readonly(Y),
        Y_LL=_readonly(Y_LL),
        Y_L0=_readonly(Y_L0),
        w=_readonly(w),
        branch_rows=tuple(rows),
    )


def branch_current_coeffs(model: GridModel, pair: tuple[int, int]) -> tuple[complex, np.ndarray]:
    """Return ``(a_jk, c_jk)`` for the directed pair ``jk``."""
    pair = tuple(pair)
    for row in model.branch_rows:
        if row.pair == pair:
            return row.a, row.c
    raise UnknownBranch(f"no branch for pair {pair}")


# --- JSON -----------------------------------------------------------------

_GRID_KEYS = {"n_pq", "slack_voltage", "branches"}
_BRANCH_KEYS = {"from", "to", "y_series", "b_shunt", "tap"}
_COMPLEX_KEYS = {"re", "im"}


def parse_complex(obj, where: str) -> complex:
    if not isinstance(obj, dict) or set(obj) != _COMPLEX_KEYS:
        raise InputError(f"{where}: expected object with exactly 're' and 'im'")
    try:
        z = complex(float(obj["re"]), float(obj["im"]))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: non-numeric value") from exc
    if not np.isfinite(z):
        raise InputError(f"{where}: non-finite value")
    return z


def complex_to_json(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def _reject_unknown(obj: dict, allowed: set, where: str):
    extra = set(obj) - allowed
    if extra:
        raise InputError(f"{where}: unknown field(s) {sorted(extra)}")


def grid_from_dict(data: dict) -> GridModel:
    if not isinstance(data, dict):
        raise InputError("grid: top level must be an object")
    _reject_unknown(data, _GRID_KEYS, "grid")
    for key in _GRID_KEYS:
        if key not in data:
            raise InputError(f"grid: missing field '{key}'")
    n_pq = data["n_pq"]
    if not isinstance(n_pq, int) or isinstance(n_pq, bool):
        raise InputError("grid.n_pq: expected integer")
    v0 = parse_complex(data["slack_voltage"], "grid.slack_voltage")
    specs = []
    for idx, br in enumerate(data["branches"]):
        where = f"grid.branches[{idx}]"
        if not isinstance(br, dict):
            raise InputError(f"{where}: expected object")
        _reject_unknown(br, _BRANCH_KEYS, where)
        for key in ("from", "to", "y_series"):
            if key not in br:
                raise InputError(f"{where}: missing field '{key}'")
        tap = br.get("tap")
        specs.append(
            BranchSpec(
                int(br["from"]),
                int(br["to"]),
                parse_complex(br["y_series"], f"{where}.y_series"),
                float(br.get("b_shunt", 0.0) or 0.0),
                None if tap is None else float(tap),
            )
        )
    return build_grid(specs, n_pq, v0)


def grid_to_dict(model: GridModel) -> dict:
    return {
        "n_pq": model.n_pq,
        "slack_voltage": complex_to_json(model.v0),
        "branches": [
            {
                "from": b.from_bus,
                "to": b.to_bus,
                "y_series": complex_to_json(b.y_series),
                "b_shunt": b.b_shunt,
                "tap": b.tap,
            }
            for b in model.branches
        ],
    }


def load_grid(path) -> GridModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return grid_from_dict(data)
