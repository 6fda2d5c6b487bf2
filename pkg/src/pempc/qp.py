"""Dense convex quadratic programming with KKT certification.

Solves

    minimize   0.5 * z' P z + q' z
    subject to A z == b,    G z <= h

for moderate dense sizes (a few hundred variables, as produced by
:mod:`pempc.controller`).  The approach:

1. Eliminate the equalities with a pivoted QR factorization of ``A'``:
   every feasible point is ``z = z_part + Z w`` with ``Z`` an orthonormal
   null-space basis.  Inconsistent equalities are detected here.
2. Solve the reduced inequality-constrained problem with a dual active-set
   method (Goldfarb-Idnani).  The reduced Hessian ``Z' P Z`` must be positive
   definite, which is exactly the usual well-posedness condition for the
   controller's cost; a failed Cholesky factorization raises
   :class:`~pempc.errors.InvalidInputError`.
3. Recover equality multipliers by least squares from stationarity and
   certify the result with :func:`kkt_residuals`.

The dual active-set method starts from the unconstrained minimum (dual
feasible by construction) and adds one violated inequality at a time, taking
full or partial steps in primal-dual space.  Primal infeasibility shows up as
an unbounded dual ray: no primal step can reduce the violation and no active
multiplier blocks, so the step length is infinite.  Ties (equal violation,
equal blocking ratios) break toward the lowest constraint index, which makes
the solver bit-deterministic for identical inputs.

Controllers solve pairs of problems that differ in exactly one inequality
row.  :func:`prepare_qp` exposes the expensive shared part (validation,
equality elimination, Hessian factorization) so such families reuse it; a
prepared problem is immutable and safe to solve from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cholesky, qr, solve_triangular

from .errors import InvalidInputError
from .linalg import as_matrix

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERATIONS = 20000

# Relative symmetry slack accepted before rejecting a cost matrix.
_SYMMETRY_RTOL = 1e-10


def _as_vector(values, length: int, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.ndim != 1 or v.size != length:
        raise InvalidInputError(f"{name} must be a vector of length {length}")
    if not np.isfinite(v).all():
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return v


@dataclass(frozen=True)
class QpInstance:
    """One quadratic program.  ``A``/``b`` and ``G``/``h`` may be ``None``.

    ``P`` must be symmetric and positive definite on the null space of ``A``
    (positive definite outright when there are no equalities); the solver
    verifies this during factorization.
    """

    P: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    A: np.ndarray | None = field(repr=False, default=None)
    b: np.ndarray | None = field(repr=False, default=None)
    G: np.ndarray | None = field(repr=False, default=None)
    h: np.ndarray | None = field(repr=False, default=None)

    def __post_init__(self):
        p = as_matrix(self.P, "P")
        n = p.shape[0]
        if p.shape[1] != n:
            raise InvalidInputError(f"P must be square, got shape {p.shape}")
        gap = np.abs(p - p.T).max()
        if gap > _SYMMETRY_RTOL * (1.0 + np.abs(p).max()):
            raise InvalidInputError("P must be symmetric")
        object.__setattr__(self, "P", 0.5 * (p + p.T))
        object.__setattr__(self, "q", _as_vector(self.q, n, "q"))

        if self.A is None and self.b is None:
            a = np.zeros((0, n))
            b = np.zeros(0)
        elif self.A is None or self.b is None:
            raise InvalidInputError("A and b must be given together")
        else:
            a = as_matrix(self.A, "A")
            if a.shape[1] != n:
                raise InvalidInputError(f"A must have {n} columns, got shape {a.shape}")
            b = _as_vector(self.b, a.shape[0], "b")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)

        if self.G is None and self.h is None:
            g = np.zeros((0, n))
            h = np.zeros(0)
        elif self.G is None or self.h is None:
            raise InvalidInputError("G and h must be given together")
        else:
            g = as_matrix(self.G, "G")
            if g.shape[1] != n:
                raise InvalidInputError(f"G must have {n} columns, got shape {g.shape}")
            h = _as_vector(self.h, g.shape[0], "h")
        object.__setattr__(self, "G", g)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def num_eq(self) -> int:
        return self.A.shape[0]

    @property
    def num_ineq(self) -> int:
        return self.G.shape[0]


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpSolution:
    """Solver outcome.

    For INFEASIBLE the point ``z`` is the last (infeasibility-certifying)
    iterate and ``primal_residual`` reports the violation floor that could
    not be reduced; for MAX_ITERATIONS it is the best iterate found.
    """

    status: QpStatus
    z: np.ndarray = field(repr=False)
    cost: float
    eq_multipliers: np.ndarray = field(repr=False)
    ineq_multipliers: np.ndarray = field(repr=False)
    primal_residual: float
    dual_residual: float
    complementarity_residual: float
    iterations: int


def _residuals(
    g_mat: np.ndarray,
    h_vec: np.ndarray,
    p: QpInstance,
    z: np.ndarray,
    y: np.ndarray,
    lam: np.ndarray,
) -> tuple[float, float, float]:
    """KKT residuals against explicit inequality data (g_mat, h_vec)."""
    primal = 0.0
    if p.num_eq:
        primal = float(np.abs(p.A @ z - p.b).max())
    slack = g_mat @ z - h_vec if h_vec.size else np.zeros(0)
    if slack.size:
        primal = max(primal, float(np.maximum(slack, 0.0).max()))
    grad = p.P @ z + p.q
    if p.num_eq:
        grad = grad + p.A.T @ y
    if lam.size:
        grad = grad + g_mat.T @ lam
    dual = float(np.abs(grad).max()) if grad.size else 0.0
    comp = float(np.abs(lam * slack).max()) if slack.size else 0.0
    return primal, dual, comp


def kkt_residuals(p: QpInstance, sol: QpSolution) -> tuple[float, float, float]:
    """Infinity-norm KKT residuals of ``sol`` for problem ``p``.

    Returns ``(primal, dual, complementarity)`` where primal is
    ``max(||A z - b||_inf, max(G z - h, 0))``, dual is
    ``||P z + q + A' y + G' lam||_inf`` and complementarity is
    ``max_i |lam_i * (G z - h)_i|``.
    """
    if not isinstance(p, QpInstance) or not isinstance(sol, QpSolution):
        raise InvalidInputError("kkt_residuals expects (QpInstance, QpSolution)")
    if sol.ineq_multipliers.size != p.num_ineq:
        raise InvalidInputError(
            "solution and instance disagree on the number of inequality rows"
        )
    return _residuals(p.G, p.h, p, sol.z, sol.eq_multipliers, sol.ineq_multipliers)


class PreparedQp:
    """Shared factorizations for a family of QPs differing by one extra
    inequality row.

    Construction performs validation, equality elimination and the reduced
    Cholesky factorization; :meth:`solve` then runs only the active-set
    phase.  Instances are immutable after construction and safe to use from
    several threads at once.
    """

    def __init__(self, p: QpInstance, tol: float = DEFAULT_TOL):
        if not isinstance(p, QpInstance):
            raise InvalidInputError("PreparedQp expects a QpInstance")
        if not (np.isfinite(tol) and tol > 0.0):
            raise InvalidInputError(f"tol must be positive, got {tol}")
        self.p = p
        self.tol = float(tol)
        n, me = p.n, p.num_eq

        if me:
            qt, r, piv = qr(p.A.T, mode="full", pivoting=True)
            diag = np.abs(np.diag(r))
            if diag.size and diag[0] > 0.0:
                rank_a = int(
                    np.count_nonzero(diag > max(n, me) * np.finfo(float).eps * diag[0])
                )
            else:
                rank_a = 0
            if rank_a:
                c1 = solve_triangular(r[:rank_a, :rank_a], p.b[piv][:rank_a], trans="T")
                z_part = qt[:, :rank_a] @ c1
            else:
                z_part = np.zeros(n)
            eq_gap = float(np.abs(p.A @ z_part - p.b).max())
            eq_scale = 1.0 + float(np.abs(p.b).max()) + float(np.abs(p.A).max())
            self.eq_consistent = eq_gap <= 1e-8 * eq_scale
            basis = qt[:, rank_a:]
            self._qt, self._r, self._piv, self._rank_a = qt, r, piv, rank_a
        else:
            z_part = np.zeros(n)
            basis = None  # identity, applied implicitly
            self.eq_consistent = True
            self._qt = self._r = self._piv = None
            self._rank_a = 0
        self.z_part = z_part
        self.basis = basis
        self.nf = n - self._rank_a

        diag_p = np.diag(p.P)
        p_is_diagonal = np.count_nonzero(p.P) == np.count_nonzero(diag_p)
        self._diag_p = diag_p
        self._p_is_diagonal = p_is_diagonal

        if not self.eq_consistent or self.nf == 0:
            self._chol = None
            self._w0 = np.zeros(self.nf)
            self._cred = np.zeros((p.num_ineq, self.nf))
            self._dred = p.h - p.G @ z_part if p.num_ineq else np.zeros(0)
            return

        if basis is None:
            hred = p.P
            gred = p.q
        else:
            pz = diag_p[:, None] * basis if p_is_diagonal else p.P @ basis
            hred = basis.T @ pz
            hred = 0.5 * (hred + hred.T)
            px = diag_p * z_part if p_is_diagonal else p.P @ z_part
            gred = basis.T @ (px + p.q)
        try:
            self._chol = cholesky(hred, lower=True)
        except LinAlgError as exc:
            raise InvalidInputError(
                "cost matrix is not positive definite on the equality null space"
            ) from exc
        self._w0 = -solve_triangular(
            self._chol,
            solve_triangular(self._chol, gred, lower=True),
            lower=True,
            trans="T",
        )
        if p.num_ineq:
            self._cred = p.G @ basis if basis is not None else p.G.copy()
            self._dred = p.h - p.G @ z_part
        else:
            self._cred = np.zeros((0, self.nf))
            self._dred = np.zeros(0)

    def with_rhs(self, b_new) -> "PreparedQp":
        """The same problem with a new equality right-hand side.

        All factorizations are shared; only the particular solution, the
        reduced gradient and the inequality offsets are recomputed.  Useful
        when a fixed-structure problem is re-solved with fresh measurements.
        """
        p = self.p
        if p.num_eq == 0:
            raise InvalidInputError("with_rhs needs a problem with equalities")
        p_new = replace(p, b=b_new)
        if self._chol is None and self.nf > 0:
            # The base right-hand side was inconsistent, so the reduced
            # factorization was never formed; start over.
            return PreparedQp(p_new, tol=self.tol)
        other = object.__new__(PreparedQp)
        other.__dict__.update(self.__dict__)
        other.p = p_new
        ra = self._rank_a
        if ra:
            c1 = solve_triangular(
                self._r[:ra, :ra], p_new.b[self._piv][:ra], trans="T"
            )
            z_part = self._qt[:, :ra] @ c1
        else:
            z_part = np.zeros(p_new.n)
        eq_gap = float(np.abs(p_new.A @ z_part - p_new.b).max())
        eq_scale = 1.0 + float(np.abs(p_new.b).max()) + float(np.abs(p_new.A).max())
        other.eq_consistent = eq_gap <= 1e-8 * eq_scale
        other.z_part = z_part
        if not other.eq_consistent or other.nf == 0:
            other._chol = None
            other._w0 = np.zeros(other.nf)
            other._cred = np.zeros((p_new.num_ineq, other.nf))
            other._dred = (
                p_new.h - p_new.G @ z_part if p_new.num_ineq else np.zeros(0)
            )
            return other
        px = self._diag_p * z_part if self._p_is_diagonal else p_new.P @ z_part
        gred = self.basis.T @ (px + p_new.q)
        other._w0 = -solve_triangular(
            self._chol,
            solve_triangular(self._chol, gred, lower=True),
            lower=True,
            trans="T",
        )
        if p_new.num_ineq:
            other._dred = p_new.h - p_new.G @ z_part
        return other

    # -- helpers -----------------------------------------------------------

    def _lift(self, w: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return self.z_part + w
        return self.z_part + self.basis @ w

    def _eq_multipliers(self, z: np.ndarray, gt_lam: np.ndarray) -> np.ndarray:
        """Least-squares equality multipliers from stationarity; ``gt_lam``
        is the inequality contribution G' lam already summed."""
        p = self.p
        if p.num_eq == 0:
            return np.zeros(0)
        rhs = -(p.P @ z + p.q + gt_lam)
        proj = self._qt.T @ rhs
        y_perm = np.zeros(p.num_eq)
        if self._rank_a:
            y_perm[: self._rank_a] = solve_triangular(
                self._r[: self._rank_a, : self._rank_a], proj[: self._rank_a]
            )
        y = np.zeros(p.num_eq)
        y[self._piv] = y_perm
        return y

    def _package(self, status, z, y, lam, g_mat, h_vec, iterations) -> QpSolution:
        primal, dual, comp = _residuals(g_mat, h_vec, self.p, z, y, lam)
        cost = float(0.5 * z @ (self.p.P @ z) + self.p.q @ z)
        return QpSolution(
            status=status,
            z=z,
            cost=cost,
            eq_multipliers=y,
            ineq_multipliers=lam,
            primal_residual=primal,
            dual_residual=dual,
            complementarity_residual=comp,
            iterations=iterations,
        )

    # -- main entry --------------------------------------------------------

    def solve(
        self,
        extra_row: np.ndarray | None = None,
        extra_rhs: float = 0.0,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ) -> QpSolution:
        """Solve the base problem, optionally with one appended inequality
        ``extra_row @ z <= extra_rhs``."""
        if max_iterations < 1:
            raise InvalidInputError(
                f"max_iterations must be >= 1, got {max_iterations}"
            )
        p = self.p
        if extra_row is not None:
            extra_row = _as_vector(extra_row, p.n, "extra_row")
            extra_rhs = float(extra_rhs)
            if not np.isfinite(extra_rhs):
                raise InvalidInputError("extra_rhs must be finite")
            g_mat = np.vstack([p.G, extra_row])
            h_vec = np.append(p.h, extra_rhs)
        else:
            g_mat, h_vec = p.G, p.h
        mi = h_vec.size

        if not self.eq_consistent:
            lam = np.zeros(mi)
            y = self._eq_multipliers(self.z_part, np.zeros(p.n))
            return self._package(
                QpStatus.INFEASIBLE, self.z_part, y, lam, g_mat, h_vec, 0
            )

        if self.nf == 0:
            # Equalities pin the point; only feasibility is in question.
            lam = np.zeros(mi)
            y = self._eq_multipliers(self.z_part, np.zeros(p.n))
            viol = (
                float(np.maximum(g_mat @ self.z_part - h_vec, 0.0).max()) if mi else 0.0
            )
            status = QpStatus.INFEASIBLE if viol > self.tol else QpStatus.OPTIMAL
            return self._package(status, self.z_part, y, lam, g_mat, h_vec, 0)

        if extra_row is not None:
            row_red = (
                extra_row @ self.basis if self.basis is not None else extra_row
            )
            cred = np.vstack([self._cred, row_red])
            dred = np.append(self._dred, extra_rhs - float(extra_row @ self.z_part))
        else:
            cred, dred = self._cred, self._dred

        if mi == 0:
            z = self._lift(self._w0)
            y = self._eq_multipliers(z, np.zeros(p.n))
            return self._package(QpStatus.OPTIMAL, z, y, np.zeros(0), g_mat, h_vec, 0)

        status, w, active, u, iterations = _dual_active_set(
            self._chol, self._w0, cred, dred, max_iterations
        )
        z = self._lift(w)
        lam = np.zeros(mi)
        if active:
            lam[active] = u
        gt_lam = g_mat.T @ lam if mi else np.zeros(p.n)
        y = self._eq_multipliers(z, gt_lam)
        sol = self._package(status, z, y, lam, g_mat, h_vec, iterations)

        if sol.status is QpStatus.OPTIMAL and max(
            sol.primal_residual, sol.dual_residual, sol.complementarity_residual
        ) > self.tol:
            refined = self._refine(active, g_mat, h_vec, sol)
            if refined is not None:
                return refined
            # Could not certify to tolerance; do not claim optimality.
            return QpSolution(
                status=QpStatus.MAX_ITERATIONS,
                z=sol.z,
                cost=sol.cost,
                eq_multipliers=sol.eq_multipliers,
                ineq_multipliers=sol.ineq_multipliers,
                primal_residual=sol.primal_residual,
                dual_residual=sol.dual_residual,
                complementarity_residual=sol.complementarity_residual,
                iterations=sol.iterations,
            )
        return sol

    def _refine(self, active, g_mat, h_vec, sol) -> QpSolution | None:
        """Re-solve the KKT system of the final active set in full precision.

        Returns None when the refined point is no better (wrong active set or
        negative multipliers), so the caller can downgrade the status instead
        of reporting an uncertified optimum.
        """
        p = self.p
        n, me = p.n, p.num_eq
        ga = g_mat[active] if active else np.zeros((0, n))
        na = len(active)
        k = np.zeros((n + me + na, n + me + na))
        k[:n, :n] = p.P
        if me:
            k[:n, n : n + me] = p.A.T
            k[n : n + me, :n] = p.A
        if na:
            k[:n, n + me :] = ga.T
            k[n + me :, :n] = ga
        rhs = np.concatenate([-p.q, p.b, h_vec[active] if na else np.zeros(0)])
        try:
            xyl = np.linalg.lstsq(k, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        z = xyl[:n]
        y = xyl[n : n + me]
        lam = np.zeros(h_vec.size)
        if na:
            lam[active] = xyl[n + me :]
            if (lam[active] < -self.tol).any():
                return None
        lam = np.maximum(lam, 0.0)
        primal, dual, comp = _residuals(g_mat, h_vec, p, z, y, lam)
        if max(primal, dual, comp) > self.tol:
            return None
        cost = float(0.5 * z @ (p.P @ z) + p.q @ z)
        return QpSolution(
            status=QpStatus.OPTIMAL,
            z=z,
            cost=cost,
            eq_multipliers=y,
            ineq_multipliers=lam,
            primal_residual=primal,
            dual_residual=dual,
            complementarity_residual=comp,
            iterations=sol.iterations,
        )


def prepare_qp(p: QpInstance, tol: float = DEFAULT_TOL) -> PreparedQp:
    """Factor the shared part of ``p`` once for a family of row variants."""
    return PreparedQp(p, tol=tol)


def _dual_active_set(chol, w0, cred, dred, max_iterations):
    """Goldfarb-Idnani dual active-set loop on the reduced problem.

    Returns ``(status, w, active, u, iterations)`` where ``active`` indexes
    rows of ``cred`` and ``u`` holds their (nonnegative) multipliers.
    """
    w = w0.copy()
    viol_tol = 1e-11 * (1.0 + np.abs(dred))
    active: list[int] = []
    u = np.zeros(0)
    iterations = 0
    status = QpStatus.OPTIMAL

    while True:
        slack = cred @ w - dred
        if active:
            slack[active] = -np.inf  # held at equality already
        pick = int(np.argmax(slack - viol_tol))
        if slack[pick] - viol_tol[pick] <= 0.0:
            break  # primal feasible: done
        normal = -cred[pick]  # >=-form normal of the violated constraint
        u_new = 0.0
        while True:
            iterations += 1
            if iterations > max_iterations:
                status = QpStatus.MAX_ITERATIONS
                break
            v = solve_triangular(chol, normal, lower=True)
            if active:
                nact = -cred[active].T
                wact = solve_triangular(chol, nact, lower=True)
                gram = wact.T @ wact
                rhs = wact.T @ v
                try:
                    gram_l = cholesky(gram, lower=True)
                    rvec = solve_triangular(
                        gram_l,
                        solve_triangular(gram_l, rhs, lower=True),
                        lower=True,
                        trans="T",
                    )
                except LinAlgError:
                    rvec = np.linalg.lstsq(gram, rhs, rcond=None)[0]
                step_dir = solve_triangular(
                    chol, v - wact @ rvec, lower=True, trans="T"
                )
            else:
                rvec = np.zeros(0)
                step_dir = solve_triangular(chol, v, lower=True, trans="T")

            denom = float(step_dir @ normal)
            zero_dir = denom <= 1e-13 * max(
                1.0, float(np.linalg.norm(step_dir)) * float(np.linalg.norm(normal))
            )
            gap = float(cred[pick] @ w - dred[pick])  # > 0 while violated
            t_full = np.inf if zero_dir else gap / denom

            t_block = np.inf
            blocker = -1
            for j in range(len(active)):
                if rvec[j] > 1e-13:
                    ratio = u[j] / rvec[j]
                    if ratio < t_block:
                        t_block = ratio
                        blocker = j

            step = min(t_full, t_block)
            if not np.isfinite(step):
                # No primal progress possible and no blocking multiplier:
                # the dual is unbounded, the primal infeasible.
                status = QpStatus.INFEASIBLE
                break

            if np.isfinite(t_full):
                u_new += step
                if active:
                    u = u - step * rvec
                if t_full <= t_block:
                    w = w + step * step_dir
                    active.append(pick)
                    u = np.append(u, u_new)
                    break  # constraint added; back to the outer loop
                w = w + step * step_dir
            else:
                # Pure dual step: shed the blocking constraint's weight.
                u_new += step
                u = u - step * rvec
            del active[blocker]
            u = np.delete(u, blocker)
        if status is not QpStatus.OPTIMAL:
            break

    return status, w, active, u, iterations


def solve_qp(
    p: QpInstance,
    tol: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> QpSolution:
    """Solve a convex QP to KKT residuals below ``tol``.

    Returns a :class:`QpSolution` whose status is OPTIMAL (all three residuals
    within ``tol``), INFEASIBLE (constraints proved inconsistent, either among
    the equalities or via an unbounded dual ray over the inequalities) or
    MAX_ITERATIONS (iteration cap hit, or a solution that could not be
    certified to ``tol``; the best iterate is still reported).

    Repeated calls on identical data take identical pivot decisions and
    return bitwise identical solutions.
    """
    return PreparedQp(p, tol=tol).solve(max_iterations=max_iterations)
