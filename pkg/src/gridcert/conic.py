"""Conic feasibility engine with independently checked infeasibility certificates.

Problems are stated as::

    minimize    c . x
    subject to  A x = b
                h - G x in K

where ``K`` is a product of nonnegative orthants, second-order cones
``{(t, u) : t >= |u|}`` and PSD cones. PSD blocks use the upper-triangle,
column-major ``svec`` with off-diagonal entries scaled by sqrt(2).

The numerical work is delegated to Clarabel (interior point on a homogeneous
embedding). An ``Infeasible`` outcome is only returned after
:func:`verify_infeasibility_certificate` has re-checked the Farkas ray with
plain arithmetic; anything doubtful becomes ``Unknown``.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import clarabel
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

FEAS_TOL = 1e-8
CERT_TOL = 1e-7
SQRT2 = np.sqrt(2.0)


class ConeKind(str, Enum):
    NONNEG = "nonneg"
    SOC = "soc"
    PSD = "psd"


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    size: int  # length for nonneg/soc, matrix side for psd

    @property
    def dim(self) -> int:
        if self.kind is ConeKind.PSD:
            return self.size * (self.size + 1) // 2
        return self.size


def NonNegative(n: int) -> Cone:
    return Cone(ConeKind.NONNEG, n)


def SecondOrder(n: int) -> Cone:
    return Cone(ConeKind.SOC, n)


def PsdMatrix(side: int) -> Cone:
    return Cone(ConeKind.PSD, side)


def svec_indices(n: int) -> list[tuple[int, int]]:
    """(row, col) pairs in svec order: upper triangle, column by column."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def svec(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    return np.array([M[i, j] * (1.0 if i == j else SQRT2) for i, j in svec_indices(n)])


def smat(v: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    for val, (i, j) in zip(v, svec_indices(n)):
        if i == j:
            M[i, i] = val
        else:
            M[i, j] = M[j, i] = val / SQRT2
    return M


@dataclass(eq=False)
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: list[Cone] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A = sp.csr_matrix((0, n)) if self.A is None else sp.csr_matrix(self.A, dtype=float)
        self.G = sp.csr_matrix((0, n)) if self.G is None else sp.csr_matrix(self.G, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if self.A.shape != (len(self.b), n) or self.G.shape != (len(self.h), n):
            raise ValueError("inconsistent problem dimensions")
        if sum(k.dim for k in self.cones) != len(self.h):
            raise ValueError("cone dimensions do not add up to len(h)")
        for arr in (self.c, self.b, self.h, self.A.data, self.G.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite problem data")

    @property
    def n_var(self) -> int:
        return len(self.c)

    def blocks(self) -> Iterator[tuple[Cone, slice]]:
        start = 0
        for cone in self.cones:
            yield cone, slice(start, start + cone.dim)
            start += cone.dim

    def scaled(self, alpha: float) -> "ConicProblem":
        """All constraint data multiplied by ``alpha`` (same feasible set for alpha > 0)."""
        return ConicProblem(self.c, alpha * self.A, alpha * self.b, alpha * self.G, alpha * self.h, list(self.cones))


class ConicProblemBuilder:
    """Incremental assembly of a ConicProblem from dense or sparse rows."""

    def __init__(self, n_var: int):
        self.n_var = n_var
        self.c = np.zeros(n_var)
        self._eq_rows, self._eq_rhs = [], []
        self._cone_rows, self._cone_rhs, self._cones = [], [], []

    def add_equalities(self, rows, rhs):
        self._eq_rows.append(sp.csr_matrix(rows, shape=(len(np.atleast_1d(rhs)), self.n_var)))
        self._eq_rhs.append(np.atleast_1d(np.asarray(rhs, dtype=float)))

    def add_cone(self, cone: Cone, G_rows, h):
        """Constraint ``h - G_rows x in cone``."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        if len(h) != cone.dim:
            raise ValueError("cone block dimension mismatch")
        self._cone_rows.append(sp.csr_matrix(G_rows, shape=(cone.dim, self.n_var)))
        self._cone_rhs.append(h)
        self._cones.append(cone)

    def add_affine_cone(self, cone: Cone, M_rows, m0):
        """Constraint ``m0 + M_rows x in cone``."""
        self.add_cone(cone, -sp.csr_matrix(M_rows, shape=(cone.dim, self.n_var)), m0)

    def build(self) -> ConicProblem:
        A = sp.vstack(self._eq_rows, format="csr") if self._eq_rows else sp.csr_matrix((0, self.n_var))
        b = np.concatenate(self._eq_rhs) if self._eq_rhs else np.zeros(0)
        G = sp.vstack(self._cone_rows, format="csr") if self._cone_rows else sp.csr_matrix((0, self.n_var))
        h = np.concatenate(self._cone_rhs) if self._cone_rhs else np.zeros(0)
        return ConicProblem(self.c.copy(), A, b, G, h, list(self._cones))


class Status(str, Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNKNOWN = "Unknown"


@dataclass(frozen=True, eq=False)
class Certificate:
    """Farkas ray: ``A'y + G'z = 0``, ``b.y + h.z < 0``, ``z`` in the dual cone."""

    y: np.ndarray
    z: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(self.y @ self.y + self.z @ self.z))


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    certificate: Certificate | None = None
    reason: str = ""
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    solver_status: str = ""
    solve_time: float = 0.0


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = FEAS_TOL
    cert_tol: float = CERT_TOL
    max_iter: int = 200


# --- cone geometry --------------------------------------------------------


def _project_block(cone: Cone, v: np.ndarray) -> np.ndarray:
    if cone.kind is ConeKind.NONNEG:
        return np.maximum(v, 0.0)
    if cone.kind is ConeKind.SOC:
        t, u = v[0], v[1:]
        nu = np.linalg.norm(u)
        if nu <= t:
            return v.copy()
        if nu <= -t:
            return np.zeros_like(v)
        alpha = 0.5 * (t + nu)
        return np.concatenate([[alpha], alpha * u / nu])
    M = smat(v, cone.size)
    vals, vecs = np.linalg.eigh(M)
    return svec((vecs * np.maximum(vals, 0.0)) @ vecs.T)


def cone_violation(cone: Cone, v: np.ndarray) -> float:
    """Nonnegative number, zero iff ``v`` lies in the (self-dual) cone."""
    if cone.kind is ConeKind.NONNEG:
        return float(max(0.0, -v.min(initial=0.0)))
    if cone.kind is ConeKind.SOC:
        return float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
    return float(max(0.0, -np.linalg.eigvalsh(smat(v, cone.size))[0]))


def primal_residuals(problem: ConicProblem, x: np.ndarray) -> dict:
    s = problem.h - problem.G @ x
    cone_res = max((cone_violation(k, s[sl]) for k, sl in problem.blocks()), default=0.0)
    eq_res = float(np.max(np.abs(problem.A @ x - problem.b), initial=0.0))
    return {"equality": eq_res, "cone": cone_res}


def certificate_report(problem: ConicProblem, cert: Certificate) -> dict:
    """Arithmetic check of a Farkas ray, independent of any solver.

    The ray is normalised to ``b.y + h.z = -1``, ``z`` is projected onto the
    dual cone, and the stationarity residual ``r = A'y + G'z`` recomputed.
    Any feasible ``x`` would satisfy ``-1 = z.s + r.x >= -|r|_1 |x|_inf``, so
    no feasible point exists with ``|x|_inf < 1/|r|_1`` (``certified_radius``).
    """
    y = np.asarray(cert.y, dtype=float)
    z = np.asarray(cert.z, dtype=float)
    report = {"valid_shape": True, "gap": float("nan"), "residual": float("inf"), "cone_distance": float("inf"), "certified_radius": 0.0}
    if y.shape != problem.b.shape or z.shape != problem.h.shape:
        report["valid_shape"] = False
        return report
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        return report
    gap = float(problem.b @ y + problem.h @ z)
    report["gap"] = gap
    if not gap < 0:
        return report
    y, z = y / -gap, z / -gap
    z_proj = np.concatenate([_project_block(k, z[sl]) for k, sl in problem.blocks()]) if len(z) else z
    dist = float(np.max(np.abs(z - z_proj), initial=0.0))
    gap_proj = float(problem.b @ y + problem.h @ z_proj)
    if not gap_proj < 0:
        report["cone_distance"] = dist
        return report
    y, z_proj = y / -gap_proj, z_proj / -gap_proj
    r = problem.A.T @ y + problem.G.T @ z_proj
    report.update(
        residual=float(np.max(np.abs(r), initial=0.0)),
        cone_distance=dist,
        certified_radius=float(1.0 / max(np.abs(r).sum(), 1e-300)),
    )
    return report


def verify_infeasibility_certificate(problem: ConicProblem, certificate: Certificate | None, cert_tol: float = CERT_TOL) -> bool:
    """True iff the certificate proves infeasibility up to ``cert_tol``."""
    if certificate is None:
        return False
    rep = certificate_report(problem, certificate)
    return bool(rep["valid_shape"] and rep["gap"] < 0 and rep["residual"] <= cert_tol and rep["cone_distance"] <= cert_tol)


def refine_certificate(problem: ConicProblem, cert: Certificate, iterations: int = 30) -> Certificate:
    """Polish a nearly valid Farkas ray by alternating projections.

    Alternates between the affine set ``{A'y + G'z = 0, b.y + h.z = -1}``
    and ``z`` in the dual cone. The result is only a candidate: it still
    has to pass :func:`verify_infeasibility_certificate`.
    """
    meq = problem.A.shape[0]
    B = sp.vstack(
        [
            sp.hstack([problem.A.T, problem.G.T]),
            sp.csr_matrix(np.concatenate([problem.b, problem.h])[None, :]),
        ],
        format="csc",
    )
    rhs = np.zeros(B.shape[0])
    rhs[-1] = -1.0
    gram = (B @ B.T).tocsc()
    gram = gram + 1e-14 * max(1.0, abs(gram).max()) * sp.identity(gram.shape[0], format="csc")
    try:
        solve_gram = spla.factorized(gram)
    except RuntimeError:
        return cert
    gap = float(problem.b @ cert.y + problem.h @ cert.z)
    if not gap < 0:
        return cert
    u = np.concatenate([cert.y, cert.z]) / -gap
    best, best_score = cert, _certificate_score(problem, cert)
    for _ in range(iterations):
        u = u - B.T @ solve_gram(B @ u - rhs)
        z = u[meq:]
        u[meq:] = np.concatenate([_project_block(k, z[sl]) for k, sl in problem.blocks()]) if len(z) else z
        cand = Certificate(u[:meq].copy(), u[meq:].copy())
        score = _certificate_score(problem, cand)
        if score < best_score:
            best, best_score = cand, score
    return best


def _certificate_score(problem, cert) -> float:
    rep = certificate_report(problem, cert)
    if not rep["valid_shape"] or not rep["gap"] < 0:
        return float("inf")
    return max(rep["residual"], rep["cone_distance"])


# --- audit trail ----------------------------------------------------------

_audit_lock = threading.Lock()
_audit_sinks: list[list] = []


@contextlib.contextmanager
def record_outcomes():
    """Collect every ``(problem, outcome)`` pair produced by :func:`solve` inside the block."""
    sink: list = []
    with _audit_lock:
        _audit_sinks.append(sink)
    try:
        yield sink
    finally:
        with _audit_lock:
            _audit_sinks.remove(sink)


def _audit(problem, outcome):
    with _audit_lock:
        for sink in _audit_sinks:
            sink.append((problem, outcome))


# --- solver ---------------------------------------------------------------


def _clarabel_cones(problem: ConicProblem):
    cones = []
    if problem.A.shape[0]:
        cones.append(clarabel.ZeroConeT(problem.A.shape[0]))
    for k in problem.cones:
        if k.kind is ConeKind.NONNEG:
            cones.append(clarabel.NonnegativeConeT(k.size))
        elif k.kind is ConeKind.SOC:
            cones.append(clarabel.SecondOrderConeT(k.size))
        else:
            cones.append(clarabel.PSDTriangleConeT(k.size))
    return cones


def solve(problem: ConicProblem, opts: SolveOptions | None = None) -> SolveOutcome:
    outcome = _solve(problem, opts or SolveOptions())
    _audit(problem, outcome)
    return outcome


# Clarabel's default static regularisation is too light for some moment
# programs whose equality rows are nearly dependent; the KKT factorisation
# then breaks down within a few iterations. Later rungs only run after a
# NumericalError and every verdict still passes the certificate checker.
REGULARISATION_LADDER = (None, 1e-7, 1e-6)


def _solve(problem: ConicProblem, opts: SolveOptions) -> SolveOutcome:
    outcome = None
    for reg in REGULARISATION_LADDER:
        outcome = _solve_once(problem, opts, reg)
        if outcome.solver_status != "NumericalError" or outcome.status is not Status.UNKNOWN:
            return outcome
    return outcome


def _solve_once(problem: ConicProblem, opts: SolveOptions, static_reg) -> SolveOutcome:
    n = problem.n_var
    meq = problem.A.shape[0]
    A = sp.vstack([problem.A, problem.G], format="csc")
    b = np.concatenate([problem.b, problem.h])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = opts.max_iter
    settings.tol_feas = min(1e-9, opts.feas_tol)
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.tol_infeas_abs = 1e-10
    settings.tol_infeas_rel = 1e-10
    settings.presolve_enable = False
    settings.chordal_decomposition_enable = False
    settings.max_threads = 1
    if static_reg is not None:
        settings.static_regularization_constant = static_reg
    try:
        solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), problem.c, A, b, _clarabel_cones(problem), settings)
        sol = solver.solve()
    except Exception as exc:  # solver crashes are numerical distress, never a verdict
        return SolveOutcome(Status.UNKNOWN, reason=f"solver error: {exc}")
    status = str(sol.status)
    common = dict(iterations=int(sol.iterations), solver_status=status, solve_time=float(sol.solve_time))

    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        cert, rep = _checked_ray(problem, sol, meq, opts)
        if rep["verified"]:
            return SolveOutcome(Status.INFEASIBLE, certificate=cert, residuals=rep, **common)
        return SolveOutcome(Status.UNKNOWN, reason="infeasibility certificate failed verification", residuals=rep, **common)

    if status in ("Solved", "AlmostSolved"):
        x = np.asarray(sol.x, dtype=float)
        res = primal_residuals(problem, x)
        scale = 1.0 + max(np.max(np.abs(problem.b), initial=0.0), np.max(np.abs(problem.h), initial=0.0))
        if max(res.values()) <= opts.feas_tol * scale:
            return SolveOutcome(Status.FEASIBLE, x=x, objective=float(problem.c @ x), residuals=res, **common)
        return SolveOutcome(Status.UNKNOWN, x=x, reason="primal point outside feasibility tolerance", residuals=res, **common)

    # A stalled run often ends on a usable Farkas ray; only the verifier decides.
    if status not in ("DualInfeasible", "AlmostDualInfeasible"):
        cert, rep = _checked_ray(problem, sol, meq, opts)
        if rep["verified"]:
            return SolveOutcome(Status.INFEASIBLE, certificate=cert, residuals=rep, **common)
    return SolveOutcome(Status.UNKNOWN, reason=f"solver status {status}", **common)


def _checked_ray(problem, sol, meq, opts):
    z = np.asarray(sol.z, dtype=float)
    if len(z) != meq + len(problem.h) or not np.all(np.isfinite(z)):
        return None, {"verified": False}
    cert = Certificate(z[:meq].copy(), z[meq:].copy())
    if not verify_infeasibility_certificate(problem, cert, opts.cert_tol):
        cert = refine_certificate(problem, cert)
    rep = certificate_report(problem, cert)
    rep["verified"] = verify_infeasibility_certificate(problem, cert, opts.cert_tol)
    return cert, rep


# --- debug text format ----------------------------------------------------


def dump_problem(problem: ConicProblem, fh) -> None:
    """Write ``problem`` as text: cone header lines then ``block row col value`` per nonzero."""
    fh.write(f"# n_var {problem.n_var}\n")
    fh.write(f"# n_eq {problem.A.shape[0]}\n")
    for cone in problem.cones:
        fh.write(f"# cone {cone.kind.value} {cone.size}\n")
    for j in np.flatnonzero(problem.c):
        fh.write(f"c 0 {j} {float(problem.c[j])!r}\n")
    for name, M in (("A", problem.A), ("G", problem.G)):
        coo = M.tocoo()
        for i, j, val in zip(coo.row, coo.col, coo.data):
            if val != 0:
                fh.write(f"{name} {i} {j} {float(val)!r}\n")
    for name, vec in (("b", problem.b), ("h", problem.h)):
        for i in np.flatnonzero(vec):
            fh.write(f"{name} {i} 0 {float(vec[i])!r}\n")


def load_problem(fh) -> ConicProblem:
    n_var = n_eq = None
    cones = []
    entries = {k: [] for k in "cAGbh"}
    for line in fh:
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "#":
            if parts[1] == "n_var":
                n_var = int(parts[2])
            elif parts[1] == "n_eq":
                n_eq = int(parts[2])
            elif parts[1] == "cone":
                cones.append(Cone(ConeKind(parts[2]), int(parts[3])))
            continue
        entries[parts[0]].append((int(parts[1]), int(parts[2]), float(parts[3])))
    m = sum(k.dim for k in cones)

    def mat(name, rows):
        data = entries[name]
        if not data:
            return sp.csr_matrix((rows, n_var))
        r, c, v = zip(*data)
        return sp.csr_matrix((v, (r, c)), shape=(rows, n_var))

    def vec(name, size, col=False):
        out = np.zeros(size)
        for i, j, val in entries[name]:
            out[j if col else i] = val
        return out

    return ConicProblem(vec("c", n_var, col=True), mat("A", n_eq), vec("b", n_eq), mat("G", m), vec("h", m), cones)
