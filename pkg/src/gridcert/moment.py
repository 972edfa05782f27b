"""Boundary polynomial programs and their sparse moment relaxations.

For each constraint ``l`` of the voltage set, the boundary program asks for
a voltage with ``f_l = 0``, all other ``f_l' >= 0`` and an injection inside
the uncertainty set. Infeasibility of a moment relaxation of that program
implies infeasibility of the program itself.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .constraints import ConstraintSet, power_forms
from .errors import OrderTooLow, UnsupportedUncertainty
from .grid import GridModel
from .polynomial import SparsePolynomial, add_exponents, grlex_key, monomial_basis
from .uncertainty import Polygon, Singleton, UncertaintySet

DEFAULT_ORDER = 2


@dataclass(eq=False)
class PolynomialProgram:
    """``min objective`` s.t. ``g >= 0`` for g in inequalities, ``h = 0`` for h in equalities."""

    nvars: int
    objective: SparsePolynomial
    inequalities: list[SparsePolynomial] = field(default_factory=list)
    equalities: list[SparsePolynomial] = field(default_factory=list)

    def __post_init__(self):
        for p in [self.objective, *self.inequalities, *self.equalities]:
            if p.nvars != self.nvars:
                raise ValueError("all polynomials must share the variable count")

    @property
    def constraints(self) -> list[SparsePolynomial]:
        return [*self.inequalities, *self.equalities]

    def max_violation(self, x) -> float:
        worst = 0.0
        for g in self.inequalities:
            worst = max(worst, -g(x))
        for h in self.equalities:
            worst = max(worst, abs(h(x)))
        return worst


def injection_polynomials(model: GridModel, uncertainty: UncertaintySet):
    """Inequalities and equalities expressing ``F(v)`` in the uncertainty set."""
    if uncertainty.n_pq != model.n_pq:
        raise ValueError("uncertainty set size does not match the grid")
    ineqs, eqs = [], []
    for bus, region in enumerate(uncertainty.regions, start=1):
        re_f, im_f = (SparsePolynomial.from_quadratic_form(q) for q in power_forms(model, bus))
        if isinstance(region, Singleton):
            eqs.append(re_f - region.point.real)
            eqs.append(im_f - region.point.imag)
        elif isinstance(region, Polygon):
            for alpha, beta, gamma in region.half_planes:
                ineqs.append(gamma - alpha * re_f - beta * im_f)
        else:
            raise UnsupportedUncertainty(f"bus {bus}: unsupported region {type(region).__name__}")
    return ineqs, eqs


def formulate_p0(model: GridModel, cs: ConstraintSet, ell: int, uncertainty: UncertaintySet) -> PolynomialProgram:
    """Boundary program for constraint ``ell`` (1-based)."""
    if not 1 <= ell <= len(cs):
        raise IndexError(f"ell={ell} outside 1..{len(cs)}")
    nvars = 2 * model.n_pq
    objective = SparsePolynomial(nvars, {tuple(np.eye(nvars, dtype=int)[i]): 1.0 for i in range(nvars)})
    polys = [SparsePolynomial.from_quadratic_form(c.form) for c in cs]
    ineqs = [p for idx, p in enumerate(polys, start=1) if idx != ell]
    eqs = [polys[ell - 1]]
    inj_ineqs, inj_eqs = injection_polynomials(model, uncertainty)
    return PolynomialProgram(nvars, objective, ineqs + inj_ineqs, eqs + inj_eqs)


# --- correlative sparsity ---------------------------------------------------


@dataclass(eq=False)
class CliqueStructure:
    nvars: int
    edges: set
    fill_edges: set
    elimination_order: list[int]
    cliques: list[tuple[int, ...]]
    assignment: list[int]  # constraint index (ineqs then eqs) -> clique index

    def chordal_edges(self) -> set:
        return self.edges | self.fill_edges


def _minimum_degree_extension(nvars: int, edges: set):
    adj = {v: set() for v in range(nvars)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    remaining = set(range(nvars))
    fill, order, candidates = set(), [], []
    while remaining:
        v = min(remaining, key=lambda u: (len(adj[u] & remaining), u))
        nb = sorted(adj[v] & remaining)
        for i, a in enumerate(nb):
            for b in nb[i + 1:]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fill.add((a, b))
        candidates.append(frozenset([v, *nb]))
        order.append(v)
        remaining.remove(v)
    maximal = [c for c in candidates if not any(c < other for other in candidates)]
    cliques = sorted({tuple(sorted(c)) for c in maximal})
    return fill, order, cliques


def is_perfect_elimination_order(nvars: int, edges: set, order: list[int]) -> bool:
    """Check that every vertex's later neighbours form a clique."""
    adj = {v: set() for v in range(nvars)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    pos = {v: i for i, v in enumerate(order)}
    for v in order:
        later = [u for u in adj[v] if pos[u] > pos[v]]
        for i, a in enumerate(later):
            for b in later[i + 1:]:
                if b not in adj[a]:
                    return False
    return True


def correlative_sparsity(program: PolynomialProgram) -> CliqueStructure:
    edges = set(program.objective.cross_pairs())
    for g in program.constraints:
        sup = sorted(g.support())
        for i, a in enumerate(sup):
            for b in sup[i + 1:]:
                edges.add((a, b))
    edges = {(min(a, b), max(a, b)) for a, b in edges}
    fill, order, cliques = _minimum_degree_extension(program.nvars, edges)
    assignment = []
    for g in program.constraints:
        sup = g.support()
        owner = next((r for r, c in enumerate(cliques) if sup <= set(c)), None)
        if owner is None:  # cannot happen for a valid chordal extension
            raise RuntimeError("constraint support not covered by any clique")
        assignment.append(owner)
    return CliqueStructure(program.nvars, edges, fill, order, cliques, assignment)


# --- moment SDP -----------------------------------------------------------


@dataclass(eq=False)
class MomentSDP:
    problem: conic.ConicProblem
    monomials: list[tuple[int, ...]]
    index: dict
    omega: int
    cliques: CliqueStructure
    blocks: list[dict]

    def lift(self, x) -> np.ndarray:
        return lift_point(self, x)


def _localizing_rows(f: SparsePolynomial, basis, index, n_var):
    """Sparse rows of ``L(f)`` in svec order (upper triangle by column)."""
    m = len(basis)
    rows, cols, vals = [], [], []
    r = 0
    for j in range(m):
        for i in range(j + 1):
            scale = 1.0 if i == j else conic.SQRT2
            base = add_exponents(basis[i], basis[j])
            for gamma, c in f.terms.items():
                rows.append(r)
                cols.append(index[add_exponents(base, gamma)])
                vals.append(scale * c)
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, n_var))


def build_moment_sdp(program: PolynomialProgram, cliques: CliqueStructure, omega: int) -> MomentSDP:
    """Sparse moment relaxation of order ``omega``.

    Variables are moments ``y_alpha`` over the union of clique monomials of
    degree <= 2*omega; one moment matrix per clique, one localizing matrix per
    inequality, and the localizing matrix of each equality pinned to zero.
    """
    need = max([program.objective.half_degree] + [g.half_degree for g in program.constraints], default=0)
    if omega < max(need, 1):
        raise OrderTooLow(f"relaxation order {omega} below required {max(need, 1)}")
    n = program.nvars
    monos = set()
    for c in cliques.cliques:
        monos.update(monomial_basis(c, 2 * omega, n))
    monomials = sorted(monos, key=grlex_key)
    index = {a: k for k, a in enumerate(monomials)}
    n_var = len(monomials)
    builder = conic.ConicProblemBuilder(n_var)
    blocks = []

    for alpha, c in program.objective.terms.items():
        if alpha not in index:
            raise RuntimeError("objective monomial outside every clique")
        builder.c[index[alpha]] += c

    zero = (0,) * n
    builder.add_equalities(sp.csr_matrix(([1.0], ([0], [index[zero]])), shape=(1, n_var)), [1.0])

    one = SparsePolynomial.constant(n, 1.0)
    for r, clique in enumerate(cliques.cliques):
        basis = monomial_basis(clique, omega, n)
        rows = _localizing_rows(one, basis, index, n_var)
        builder.add_affine_cone(conic.PsdMatrix(len(basis)), rows, np.zeros(rows.shape[0]))
        blocks.append({"type": "moment", "clique": r, "side": len(basis)})

    n_ineq = len(program.inequalities)
    for k, g in enumerate(program.constraints):
        clique = cliques.cliques[cliques.assignment[k]]
        basis = monomial_basis(clique, omega - g.half_degree, n)
        rows = _localizing_rows(g, basis, index, n_var)
        if k < n_ineq:
            cone = conic.NonNegative(1) if len(basis) == 1 else conic.PsdMatrix(len(basis))
            builder.add_affine_cone(cone, rows, np.zeros(rows.shape[0]))
            blocks.append({"type": "localizing", "constraint": k, "side": len(basis)})
        else:
            builder.add_equalities(rows, np.zeros(rows.shape[0]))
            blocks.append({"type": "equality", "constraint": k, "side": len(basis)})
    return MomentSDP(builder.build(), monomials, index, omega, cliques, blocks)


def lift_point(sdp: MomentSDP, x) -> np.ndarray:
    """Moment vector ``y_alpha = x^alpha`` of a point ``x`` (real coordinates)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        x = np.concatenate([x.real, x.imag])
    x = x.astype(float)
    exps = np.array(sdp.monomials)
    return np.prod(x[None, :] ** exps, axis=1)


# --- boundary checks ------------------------------------------------------


@dataclass(frozen=True)
class P0Result:
    ell: int
    kind: str
    owner: object
    status: str  # "Infeasible" | "NotProven"
    reason: str = ""
    certificate_norm: float | None = None
    certified_radius: float | None = None
    wall_time: float = 0.0
    solver_status: str = ""

    def to_dict(self) -> dict:
        return {
            "ell": self.ell,
            "kind": self.kind,
            "owner": list(self.owner) if isinstance(self.owner, tuple) else self.owner,
            "status": self.status,
            "reason": self.reason,
            "certificate_norm": self.certificate_norm,
            "certified_radius": self.certified_radius,
            "wall_time": self.wall_time,
            "solver_status": self.solver_status,
        }


def check_single_p0(model, cs, ell, uncertainty, omega=DEFAULT_ORDER, opts=None, dump_dir=None) -> P0Result:
    entry = cs[ell - 1]
    t0 = time.perf_counter()
    label = dict(ell=ell, kind=entry.kind.value, owner=entry.owner)
    program = formulate_p0(model, cs, ell, uncertainty)
    try:
        sdp = build_moment_sdp(program, correlative_sparsity(program), omega)
    except OrderTooLow as exc:
        return P0Result(**label, status="NotProven", reason=str(exc), wall_time=time.perf_counter() - t0)
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        with open(os.path.join(dump_dir, f"p0_{ell:03d}.txt"), "w") as fh:
            conic.dump_problem(sdp.problem, fh)
    out = conic.solve(sdp.problem, opts)
    elapsed = time.perf_counter() - t0
    if out.status is conic.Status.INFEASIBLE:
        return P0Result(
            **label,
            status="Infeasible",
            certificate_norm=out.certificate.norm(),
            certified_radius=out.residuals.get("certified_radius"),
            wall_time=elapsed,
            solver_status=out.solver_status,
        )
    reason = "relaxation feasible" if out.status is conic.Status.FEASIBLE else out.reason
    return P0Result(**label, status="NotProven", reason=reason, wall_time=elapsed, solver_status=out.solver_status)


def check_p0_infeasible(
    model: GridModel,
    cs: ConstraintSet,
    uncertainty: UncertaintySet,
    omega: int = DEFAULT_ORDER,
    opts: conic.SolveOptions | None = None,
    parallel: int = 1,
    dump_dir=None,
) -> list[P0Result]:
    """Relaxed boundary check for every constraint, ordered by ``ell``."""
    ells = range(1, len(cs) + 1)
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(lambda l: check_single_p0(model, cs, l, uncertainty, omega, opts, dump_dir), ells))
    return [check_single_p0(model, cs, l, uncertainty, omega, opts, dump_dir) for l in ells]
