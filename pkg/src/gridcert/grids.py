"""Small stand-in grids for tests, demos and the oracle suites."""
from __future__ import annotations

import numpy as np

from .grid import BranchSpec, GridModel, build_grid


def two_bus(y: complex = 1.0, v0: complex = 1.0) -> GridModel:
    """Slack bus 0 feeding PQ bus 1 through one series admittance."""
    return build_grid([BranchSpec(0, 1, y)], 1, v0)


def chain(n_pq: int, y: complex = 10 - 20j, b_shunt: float = 0.0) -> GridModel:
    """Radial feeder 0 - 1 - ... - n_pq with identical lines."""
    return build_grid([BranchSpec(k, k + 1, y, b_shunt) for k in range(n_pq)], n_pq)


def random_grid(n_pq: int, seed: int | None = 0, meshed: bool = False, shunts: bool = False) -> GridModel:
    """Random radial tree, optionally with extra chords, and line admittances of R/X 0.3 to 1.5."""
    rng = np.random.default_rng(seed)
    branches = []
    used = set()

    def line():
        z = rng.uniform(0.02, 0.12) * np.exp(1j * np.arctan(1.0 / rng.uniform(0.3, 1.5)))
        b = rng.uniform(0.0, 0.02) if shunts else 0.0
        return 1.0 / z, b

    for k in range(1, n_pq + 1):
        parent = int(rng.integers(0, k))
        y, b = line()
        branches.append(BranchSpec(parent, k, y, b))
        used.add(frozenset((parent, k)))
    if meshed and n_pq >= 2:
        for _ in range(max(1, n_pq // 2)):
            a, c = (int(x) for x in rng.choice(n_pq + 1, 2, replace=False))
            if frozenset((a, c)) in used:
                continue
            y, b = line()
            branches.append(BranchSpec(a, c, y, b))
            used.add(frozenset((a, c)))
    return build_grid(branches, n_pq)


def radial_12() -> GridModel:
    """12-PQ-bus feeder: a main trunk of eight buses with two laterals."""
    z = 0.03 + 0.05j
    edges = [(k, k + 1) for k in range(8)] + [(3, 9), (9, 10), (6, 11), (11, 12)]
    return build_grid([BranchSpec(a, b, 1.0 / z) for a, b in edges], 12)
