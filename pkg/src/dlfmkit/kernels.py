"""Convex kernels shared by the block solvers.

A dense operator-splitting QP solver, Euclidean projections onto constraint
atoms and their intersections, and proximal operators for the parameter-side
regularizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model

# bound sentinel: entries at +-INF are treated as absent bounds
INF = 1e30

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"

# ADMM constants
_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_INIT = 0.1
_RHO_EQ_SCALE = 1e3
_CHECK_EVERY = 25


class ProjectionError(RuntimeError):
    """Projection subproblem failed (infeasible or solver breakdown)."""


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimize 0.5 x^T P x + q^T x  subject to  lo <= A x <= hi.

    P must be symmetric PSD. Equality rows use lo == hi; one-sided rows use
    the +-INF sentinel.
    """

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def qp_problem(P, q, A, lo, hi) -> QpProblem:
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, n)
    return QpProblem(
        P=np.asarray(P, dtype=float),
        q=q,
        A=A,
        lo=np.asarray(lo, dtype=float).reshape(A.shape[0]),
        hi=np.asarray(hi, dtype=float).reshape(A.shape[0]),
    )


@dataclass(eq=False)
class QpSolution:
    x: np.ndarray
    y: np.ndarray  # dual for lo <= Ax <= hi (>= 0 at hi, <= 0 at lo)
    z: np.ndarray  # auxiliary copy of Ax, feasible by construction
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int


class QpWorkspace:
    """Caches the reduced KKT inverse and iterates across repeated solves.

    Reuse is valid whenever the problem dimensions are fixed; the factorization
    is refreshed automatically when P, A, or the penalty changes.
    """

    def __init__(self):
        self.M_inv = None
        self.P = None
        self.A = None
        self.rho = None
        self.rho_base = None
        self.x = None
        self.y = None
        self.z = None

    def refresh(self, P, A, rho):
        same = (
            self.M_inv is not None
            and np.array_equal(self.P, P)
            and np.array_equal(self.A, A)
            and np.array_equal(self.rho, rho)
        )
        if not same:
            M = P + _SIGMA * np.eye(P.shape[0])
            if A.shape[0]:
                M = M + (A.T * rho) @ A
            self.M_inv = np.linalg.inv(M)
            self.P, self.A, self.rho = P, A, rho


def qp_solve(
    prob: QpProblem,
    warm_start: QpSolution | None = None,
    tol: float = 1e-8,
    max_iter: int = 20000,
    workspace: QpWorkspace | None = None,
) -> QpSolution:
    """Solve a dense QP by over-relaxed operator splitting.

    Penalty starts at 0.1 and rebalances by factor 2 whenever the primal/dual
    residual ratio exceeds 10; equality rows carry a stiffer penalty. Returns
    SOLVED when both KKT residuals drop to tol, PRIMAL_INFEASIBLE when the
    divergence certificate of the dual update persists, MAX_ITER otherwise.
    Deterministic; warm starts and a reusable workspace cut repeat-solve cost.
    """
    P, q, A = prob.P, prob.q, prob.A
    lo, hi = prob.lo, prob.hi
    n, m = q.shape[0], A.shape[0]

    if m == 0:
        x, *_ = np.linalg.lstsq(P, -q, rcond=None)
        r_dual = float(np.abs(P @ x + q).max()) if n else 0.0
        status = SOLVED if r_dual <= tol else MAX_ITER
        return QpSolution(x, np.zeros(0), np.zeros(0), status, 0.0, r_dual, 0)

    ws = workspace if workspace is not None else QpWorkspace()
    eq_rows = lo >= hi  # lo == hi up to ordering; treated as equalities
    rho_base = ws.rho_base if ws.rho_base is not None else _RHO_INIT

    def rho_vec(base):
        r = np.full(m, base)
        r[eq_rows] = base * _RHO_EQ_SCALE
        return r

    rho = rho_vec(rho_base)
    ws.refresh(P, A, rho)

    if warm_start is not None:
        x, y, z = warm_start.x.copy(), warm_start.y.copy(), warm_start.z.copy()
    elif ws.x is not None and ws.x.shape == (n,):
        x, y, z = ws.x.copy(), ws.y.copy(), ws.z.copy()
    else:
        x, y, z = np.zeros(n), np.zeros(m), np.clip(np.zeros(m), lo, hi)

    status = MAX_ITER
    r_prim = r_dual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        rhs = _SIGMA * x - q + A.T @ (rho * z - y)
        x_t = ws.M_inv @ rhs
        ax_t = A @ x_t
        x = _ALPHA * x_t + (1.0 - _ALPHA) * x
        z_pre = _ALPHA * ax_t + (1.0 - _ALPHA) * z
        z_new = np.clip(z_pre + y / rho, lo, hi)
        y_new = y + rho * (z_pre - z_new)
        dy = y_new - y
        y, z = y_new, z_new

        if it % _CHECK_EVERY == 0 or it == max_iter:
            ax = A @ x
            r_prim = float(np.abs(ax - z).max())
            r_dual = float(np.abs(P @ x + q + A.T @ y).max())
            if r_prim <= tol and r_dual <= tol:
                status = SOLVED
                break
            # primal infeasibility certificate from the dual direction
            ndy = float(np.abs(dy).max())
            if ndy > 1e-12:
                dyn = dy / ndy
                support = float(
                    np.where(dyn > 0, np.minimum(hi, INF), 0.0) @ np.maximum(dyn, 0.0)
                    + np.where(dyn < 0, np.maximum(lo, -INF), 0.0) @ np.minimum(dyn, 0.0)
                )
                if float(np.abs(A.T @ dyn).max()) <= 1e-10 and support < -1e-10:
                    status = PRIMAL_INFEASIBLE
                    break
            # residual balancing
            if r_prim > 10.0 * r_dual and rho_base < 1e6:
                rho_base *= 2.0
                rho = rho_vec(rho_base)
                ws.refresh(P, A, rho)
            elif r_dual > 10.0 * r_prim and rho_base > 1e-6:
                rho_base /= 2.0
                rho = rho_vec(rho_base)
                ws.refresh(P, A, rho)

    ws.x, ws.y, ws.z = x.copy(), y.copy(), z.copy()
    ws.rho_base = rho_base
    return QpSolution(x, y, z, status, r_prim, r_dual, it)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def pava_nondecreasing(v: np.ndarray) -> np.ndarray:
    """Isotonic (nondecreasing) projection by pooling adjacent violators."""
    vals: list[float] = []
    cnts: list[int] = []
    for x in np.asarray(v, dtype=float):
        vals.append(float(x))
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, c2 = vals.pop(), cnts.pop()
            v1, c1 = vals.pop(), cnts.pop()
            vals.append((v1 * c1 + v2 * c2) / (c1 + c2))
            cnts.append(c1 + c2)
    return np.repeat(vals, cnts)


def pava_nonincreasing(v: np.ndarray) -> np.ndarray:
    return -pava_nondecreasing(-np.asarray(v, dtype=float))


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Projection onto {x >= 0, sum x = total} by the sorted-threshold rule."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u - (css - total) / idx > 0)[0][-1]) + 1
    tau = (css[rho - 1] - total) / rho
    return np.maximum(v - tau, 0.0)


def _atom_violation(atom: model.ConstraintAtom, v: np.ndarray) -> float:
    k = atom.kind
    if k == model.FREE:
        return 0.0
    if k == model.NONNEG:
        return float(max(0.0, -(v.min(initial=0.0))))
    if k == model.NONPOS:
        return float(max(0.0, v.max(initial=0.0)))
    if k == model.BOX:
        lo = np.broadcast_to(atom.lo, v.shape)
        hi = np.broadcast_to(atom.hi, v.shape)
        return float(max(0.0, np.maximum(lo - v, v - hi).max(initial=0.0)))
    if k == model.POLYHEDRON:
        return float(max(0.0, (atom.A @ v - atom.b).max(initial=0.0)))
    if k == model.MONOTONE_NONINCREASING:
        return float(max(0.0, np.diff(v).max(initial=0.0)))
    if k == model.MONOTONE_NONDECREASING:
        return float(max(0.0, (-np.diff(v)).max(initial=0.0)))
    if k == model.NORM_BALL2:
        return float(max(0.0, np.linalg.norm(v) - atom.radius))
    if k == model.SUM_EQUALS:
        return float(abs(v.sum() - atom.value))
    raise ValueError(f"unknown constraint kind {k!r}")


def max_violation(atoms, v) -> float:
    """Largest constraint violation of v across atoms (0 when feasible)."""
    v = np.asarray(v, dtype=float)
    return max((_atom_violation(a, v) for a in atoms), default=0.0)


def _project_single(atom: model.ConstraintAtom, v: np.ndarray, tol: float) -> np.ndarray:
    k = atom.kind
    if k == model.NONNEG:
        return np.maximum(v, 0.0)
    if k == model.NONPOS:
        return np.minimum(v, 0.0)
    if k == model.BOX:
        lo = np.broadcast_to(atom.lo, v.shape)
        hi = np.broadcast_to(atom.hi, v.shape)
        if np.any(lo > hi):
            raise ProjectionError("empty feasible set: box bounds cross")
        return np.clip(v, lo, hi)
    if k == model.MONOTONE_NONINCREASING:
        return pava_nonincreasing(v)
    if k == model.MONOTONE_NONDECREASING:
        return pava_nondecreasing(v)
    if k == model.NORM_BALL2:
        nrm = float(np.linalg.norm(v))
        return v if nrm <= atom.radius else v * (atom.radius / nrm)
    if k == model.SUM_EQUALS:
        return v + (atom.value - v.sum()) / v.size
    if k == model.POLYHEDRON:
        return _project_rows(v, *_rows_single(atom, v.size), tol)
    raise ValueError(f"unknown constraint kind {k!r}")


def _rows_single(atom, n):
    # (A, lo, hi) rows for one polyhedral atom
    k = atom.kind
    I = np.eye(n)
    if k == model.NONNEG:
        return I, np.zeros(n), np.full(n, INF)
    if k == model.NONPOS:
        return I, np.full(n, -INF), np.zeros(n)
    if k == model.BOX:
        lo = np.clip(np.broadcast_to(atom.lo, (n,)), -INF, INF)
        hi = np.clip(np.broadcast_to(atom.hi, (n,)), -INF, INF)
        return I, lo, hi
    if k == model.POLYHEDRON:
        q = atom.A.shape[0]
        return atom.A, np.full(q, -INF), atom.b
    if k == model.MONOTONE_NONINCREASING:
        D = np.diff(np.eye(n), axis=0)  # rows x_{i+1} - x_i
        return D, np.full(n - 1, -INF), np.zeros(n - 1)
    if k == model.MONOTONE_NONDECREASING:
        D = np.diff(np.eye(n), axis=0)
        return D, np.zeros(n - 1), np.full(n - 1, INF)
    if k == model.SUM_EQUALS:
        row = np.ones((1, n))
        return row, np.array([atom.value]), np.array([atom.value])
    raise ValueError(f"{k!r} has no halfspace representation")


def stack_rows(atoms, n):
    """Stacked (A, lo, hi) for a list of polyhedral atoms."""
    parts = [_rows_single(a, n) for a in atoms if a.kind != model.FREE]
    if not parts:
        return np.zeros((0, n)), np.zeros(0), np.zeros(0)
    A = np.vstack([p[0] for p in parts])
    lo = np.concatenate([p[1] for p in parts])
    hi = np.concatenate([p[2] for p in parts])
    return A, lo, hi


def _project_rows(v, A, lo, hi, tol, workspace=None):
    prob = qp_problem(np.eye(v.size), -v, A, lo, hi)
    sol = qp_solve(prob, tol=tol, workspace=workspace)
    if sol.status == PRIMAL_INFEASIBLE:
        raise ProjectionError("empty feasible set")
    if sol.status == MAX_ITER:
        raise ProjectionError("projection subproblem did not converge")
    return sol.x


POLYHEDRAL_KINDS = frozenset(
    {
        model.FREE,
        model.NONNEG,
        model.NONPOS,
        model.BOX,
        model.POLYHEDRON,
        model.MONOTONE_NONINCREASING,
        model.MONOTONE_NONDECREASING,
        model.SUM_EQUALS,
    }
)

# feasible points are returned unchanged; keep this above the accuracy of the
# interior QP/Dykstra solves so projecting twice is exact
_FEAS_TOL = 1e-8

_MONOTONE_KINDS = (model.MONOTONE_NONINCREASING, model.MONOTONE_NONDECREASING)


def _monotone_scalar_bounds(poly, v: np.ndarray):
    """Exact projection onto one monotone cone intersected with uniform bounds.

    Clipping an isotonic fit at scalar bounds preserves the ordering and the
    pooled-block optimality conditions, so clip(pava(v)) is the intersection
    projection. Per-coordinate boxes do not qualify: clipping there can break
    the ordering.
    """
    mono = [a for a in poly if a.kind in _MONOTONE_KINDS]
    rest = [a for a in poly if a.kind not in _MONOTONE_KINDS]
    if len(mono) != 1 or not rest:
        return None
    lo, hi = -np.inf, np.inf
    for a in rest:
        if a.kind == model.NONNEG:
            lo = max(lo, 0.0)
        elif a.kind == model.NONPOS:
            hi = min(hi, 0.0)
        elif a.kind == model.BOX:
            alo, ahi = np.broadcast_to(a.lo, v.shape), np.broadcast_to(a.hi, v.shape)
            if np.ptp(alo) != 0.0 or np.ptp(ahi) != 0.0:
                return None
            lo, hi = max(lo, float(alo[0])), min(hi, float(ahi[0]))
        else:
            return None
    if lo > hi:
        raise ProjectionError("empty feasible set: bounds cross")
    if mono[0].kind == model.MONOTONE_NONINCREASING:
        fit = pava_nonincreasing(v)
    else:
        fit = pava_nondecreasing(v)
    return np.clip(fit, lo, hi)


def project(atoms, point, tol: float = 1e-10, workspace: QpWorkspace | None = None) -> np.ndarray:
    """Euclidean projection onto the intersection of constraint atoms.

    Single atoms use closed forms (clipping, scaling, isotonic pooling) or a
    QP for general polyhedra. Intersections of polyhedral atoms are solved as
    one QP; composing the individual projections would not give the
    intersection projection. A norm ball intersected with polyhedral atoms
    alternates both projections Dykstra-style. Points already feasible are
    returned as-is. A workspace speeds up repeated projections onto one set.
    """
    v = np.asarray(point, dtype=float)
    atoms = [a for a in atoms if a.kind != model.FREE]
    if not atoms:
        return v
    if max_violation(atoms, v) <= _FEAS_TOL:
        return v

    balls = [a for a in atoms if a.kind == model.NORM_BALL2]
    poly = [a for a in atoms if a.kind in POLYHEDRAL_KINDS]
    if len(balls) > 1:
        # concentric balls: only the smallest radius binds
        balls = [min(balls, key=lambda a: a.radius)]

    if not balls:
        if len(poly) == 1 and poly[0].kind != model.POLYHEDRON:
            return _project_single(poly[0], v, tol)
        kinds = {a.kind for a in poly}
        if kinds == {model.SUM_EQUALS, model.NONNEG}:
            total = next(a for a in poly if a.kind == model.SUM_EQUALS).value
            if total > 0.0:
                return project_simplex(v, total)
        fast = _monotone_scalar_bounds(poly, v)
        if fast is not None:
            return fast
        return _project_rows(v, *stack_rows(poly, v.size), tol, workspace)

    if not poly:
        return _project_single(balls[0], v, tol)

    # Dykstra alternation between the ball and the polyhedral intersection
    def proj_poly(u):
        if max_violation(poly, u) <= 1e-12:
            return u
        if len(poly) == 1 and poly[0].kind != model.POLYHEDRON:
            return _project_single(poly[0], u, tol)
        return _project_rows(u, *stack_rows(poly, u.size), tol, workspace)

    x = v.copy()
    p_corr = np.zeros_like(v)
    q_corr = np.zeros_like(v)
    for _ in range(5000):
        y = _project_single(balls[0], x + p_corr, tol)
        p_corr = x + p_corr - y
        x_new = proj_poly(y + q_corr)
        q_corr = y + q_corr - x_new
        if float(np.abs(x_new - x).max()) <= 1e-12 and max_violation(atoms, x_new) <= 1e-10:
            return x_new
        x = x_new
    if max_violation(atoms, x) > 1e-6:
        raise ProjectionError("alternating projection did not converge (empty set?)")
    return x


# ---------------------------------------------------------------------------
# proximal operators
# ---------------------------------------------------------------------------


def soft_threshold(v: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - amount, 0.0)


def block_shrink(v: np.ndarray, amount: float) -> np.ndarray:
    nrm = float(np.linalg.norm(v))
    if nrm <= amount:
        return np.zeros_like(v)
    return v * (1.0 - amount / nrm)


def prox(reg: model.RegularizerAtom, point, step: float = 1.0):
    """Proximal operator of step * reg at point.

    l1 soft-thresholds componentwise. group_l2 shrinks a single block toward
    zero; a list/tuple of blocks is shrunk blockwise.
    """
    if reg.kind == model.L1:
        return soft_threshold(np.asarray(point, dtype=float), step * reg.weight)
    if reg.kind == model.GROUP_L2:
        if isinstance(point, (list, tuple)):
            return [block_shrink(np.asarray(p, dtype=float), step * reg.weight) for p in point]
        return block_shrink(np.asarray(point, dtype=float), step * reg.weight)
    raise ValueError(f"{reg.kind!r} has no parameter-side proximal operator")


def _chained_prox(regs, v, step):
    # prox of l1 + group_l2 composes exactly: soft-threshold, then shrink
    out = np.asarray(v, dtype=float)
    for reg in sorted(regs, key=lambda r: 0 if r.kind == model.L1 else 1):
        out = prox(reg, out, step)
    return out


def _is_sign_box(atom, n):
    # every coordinate interval is one of (-inf,0], [0,inf), (-inf,inf), {0}
    if atom.kind in (model.NONNEG, model.NONPOS):
        return True
    if atom.kind != model.BOX:
        return False
    lo = np.broadcast_to(atom.lo, (n,))
    hi = np.broadcast_to(atom.hi, (n,))
    return bool(np.all((lo == 0.0) | (lo <= -INF)) and np.all((hi == 0.0) | (hi >= INF)))


def _is_cone(atom, n):
    if atom.kind in (
        model.NONNEG,
        model.NONPOS,
        model.MONOTONE_NONINCREASING,
        model.MONOTONE_NONDECREASING,
    ):
        return True
    if atom.kind == model.BOX:
        return _is_sign_box(atom, n)
    if atom.kind == model.POLYHEDRON:
        return bool(np.all(atom.b == 0.0))
    if atom.kind == model.SUM_EQUALS:
        return atom.value == 0.0
    return False


def _is_separable(atom):
    return atom.kind in (model.NONNEG, model.NONPOS, model.BOX)


def joint_prox(regs, atoms, point, step: float, workspace: QpWorkspace | None = None):
    """argmin_x 0.5 ||x - point||^2 + step * (regularizers)(x) over the atoms.

    Exact closed forms cover the cases the solvers hit: bare regularizers,
    bare constraints, separable boxes with l1, and cone constraints (where
    projecting first and then shrinking is exact). Anything else falls back
    to Dykstra alternation between the two proximal maps.
    """
    v = np.asarray(point, dtype=float)
    regs = [r for r in regs if r.weight > 0.0]
    atoms = [a for a in atoms if a.kind != model.FREE]
    if not regs:
        return project(atoms, v, workspace=workspace)
    if not atoms:
        return _chained_prox(regs, v, step)

    n = v.size
    kinds = {r.kind for r in regs}
    if all(_is_sign_box(a, n) for a in atoms):
        # sign boxes zero out coordinates; soft-threshold and shrink keep them
        # zeroed, so prox-after-project is exact
        return _chained_prox(regs, project(atoms, v, workspace=workspace), step)
    if kinds == {model.GROUP_L2} and all(_is_cone(a, n) for a in atoms):
        # scaling stays in the cone and preserves orthogonality of the
        # projection residual, so shrink-after-project is exact
        return _chained_prox(regs, project(atoms, v, workspace=workspace), step)
    if kinds == {model.L1} and all(_is_separable(a) for a in atoms):
        # separable 1-d problems: clip the unconstrained prox
        return project(atoms, _chained_prox(regs, v, step), workspace=workspace)

    x = v.copy()
    p_corr = np.zeros_like(v)
    q_corr = np.zeros_like(v)
    for _ in range(2000):
        y = _chained_prox(regs, x + p_corr, step)
        p_corr = x + p_corr - y
        x_new = project(atoms, y + q_corr, workspace=workspace)
        q_corr = y + q_corr - x_new
        if float(np.abs(x_new - x).max()) <= 1e-12:
            return x_new
        x = x_new
    return x
