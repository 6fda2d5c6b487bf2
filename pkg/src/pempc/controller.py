"""Receding-horizon control straight from input/output data.

Instead of a model, the optimal control problem uses Hankel matrices of a
length-T data window: any admissible trajectory of the (unknown) linear
plant is a linear combination of the window's sliding subtrajectories.  Each
step solves

    minimize    sum_{i=0}^{N-1} ||u_i - u_s||_R^2 + ||y_i - y_s||_Q^2
                + lambda_alpha ||alpha||^2 + lambda_sigma ||sigma||^2
    subject to  [u_bar; y_bar + sigma] = [H_{N+n}(u_w); H_{N+n}(y_w)] alpha
                (u_bar, y_bar)_{-n..-1} = last n measured samples
                (u_bar, y_bar)_{N-n..N-1} = setpoint held for n steps
                u_bar_i in input box, y_bar_i in output box  (i = 0..N-1)

over the stacked variable z = (u_bar, y_bar, alpha, sigma), where the bars
span steps -n..N-1 (n initialization steps plus the N-step horizon).

The twist is excitation maintenance: when the trailing window analysis
(:func:`pempc.hankel.excitation_geometry`) says the next input must stay a
distance eps away from a hyperplane, the step is solved twice, once per
closed half-space, and the cheaper optimal branch wins.  Ties go to the up
branch.  If both branches are infeasible the margin is halved (at most 6
times); if that fails too, the step falls back to the unconstrained problem
and flags the outcome, so a feasibility emergency never silently relaxes
into a pretend-constrained answer.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    InvalidInputError,
    LostExcitationError,
    NoFeasibleInputError,
    WindowTooShortError,
)
from .hankel import (
    Box,
    ExcitationGeometry,
    ExcitationStatus,
    HalfSpacePair,
    build_hankel,
    excitation_geometry,
    hankel_blocks,
    intersects_input_set,
    near_loss_geometry,
    pe_constraint_pair,
)
from .linalg import DEFAULT_RANK_RTOL, as_matrix
from .qp import PreparedQp, QpInstance, QpSolution, QpStatus, prepare_qp, solve_qp

# Maximum number of margin halvings tried when both branches are infeasible.
MAX_MARGIN_HALVINGS = 6

# Branch costs closer than this (after scaling) count as a tie.
BRANCH_TIE_TOL = 1e-9

# Sensitivity of the controller's excitation watchdog.  This is NOT a rank
# certification tolerance: it is the relative singular-value level below
# which the controller starts steering the next input away from the
# nonexciting hyperplane.  It is deliberately far looser than the 1e-9
# verification default in pempc.linalg, for two reasons.  First, repair must
# begin while the weak directions are still comfortably above the level at
# which excitation is actually lost.  Second, a loose threshold keeps the
# margin constraint active through steady state instead of letting the
# window decay for dozens of steps between interventions; with rare
# interventions the trailing-block conditioning oscillates over several
# decades and its steady-state level no longer reflects the chosen margin.
# Whether excitation is truly lost is always judged separately at the strict
# verification tolerance.
DEFAULT_CONTROLLER_RTOL = 1e-2

# Rank tolerance used to decide whether excitation is truly lost (abort)
# rather than merely degraded (intervene).  Matches the library-wide
# verification default so the controller never aborts on a window that the
# offline check would still certify.
VERIFICATION_RTOL = DEFAULT_RANK_RTOL


def _check_weight(w, size: int, name: str) -> np.ndarray:
    m = as_matrix(w, name)
    if m.shape != (size, size):
        raise InvalidInputError(f"{name} must be {size}x{size}, got {m.shape}")
    if np.abs(m - m.T).max() > 1e-10 * (1.0 + np.abs(m).max()):
        raise InvalidInputError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError(f"{name} must be positive definite") from exc
    return m


@dataclass(frozen=True)
class ControllerConfig:
    """Dimensions, weights and excitation policy for one controller.

    ``pe_order`` defaults to N + 2n, the order that guarantees the window can
    parameterize every N-step trajectory with matched initial conditions.
    The window length must satisfy T >= (m + 1) * pe_order - 1, otherwise no
    window of that length can ever be persistently exciting.
    """

    N: int
    n: int
    T: int
    m: int
    p: int
    Q: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    lambda_alpha: float
    lambda_sigma: float
    u_setpoint: np.ndarray = field(repr=False)
    y_setpoint: np.ndarray = field(repr=False)
    input_box: Box
    output_box: Box | None
    epsilon: float
    rel_tol: float = DEFAULT_CONTROLLER_RTOL
    pe_order: int | None = None

    def __post_init__(self):
        for name in ("N", "n", "T", "m", "p"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer")
        if self.N < self.n:
            raise InvalidInputError(
                f"horizon N={self.N} cannot be shorter than the system order n={self.n}"
            )
        order = self.N + 2 * self.n if self.pe_order is None else self.pe_order
        if not isinstance(order, (int, np.integer)) or order < 2:
            raise InvalidInputError(f"pe_order must be an integer >= 2, got {order}")
        object.__setattr__(self, "pe_order", int(order))
        bound = (self.m + 1) * (self.N + 2 * self.n) - 1
        if self.T < bound:
            raise InvalidInputError(
                f"window length T={self.T} is below the excitation bound "
                f"(m+1)(N+2n)-1 = {bound}"
            )
        bound_at_order = (self.m + 1) * self.pe_order - 1
        if self.T < bound_at_order:
            raise InvalidInputError(
                f"window length T={self.T} cannot sustain excitation of order "
                f"{self.pe_order}; need at least {bound_at_order}"
            )
        object.__setattr__(self, "Q", _check_weight(self.Q, self.p, "Q"))
        object.__setattr__(self, "R", _check_weight(self.R, self.m, "R"))
        for name in ("lambda_alpha", "lambda_sigma"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise InvalidInputError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        us = np.atleast_1d(np.asarray(self.u_setpoint, dtype=float))
        ys = np.atleast_1d(np.asarray(self.y_setpoint, dtype=float))
        if us.shape != (self.m,) or not np.isfinite(us).all():
            raise InvalidInputError(f"u_setpoint must be a finite vector of length {self.m}")
        if ys.shape != (self.p,) or not np.isfinite(ys).all():
            raise InvalidInputError(f"y_setpoint must be a finite vector of length {self.p}")
        object.__setattr__(self, "u_setpoint", us)
        object.__setattr__(self, "y_setpoint", ys)
        if not isinstance(self.input_box, Box):
            raise InvalidInputError("input_box must be a Box")
        if self.input_box.dim != self.m:
            raise InvalidInputError(
                f"input_box dimension {self.input_box.dim} does not match m={self.m}"
            )
        if self.output_box is not None:
            if not isinstance(self.output_box, Box):
                raise InvalidInputError("output_box must be a Box or None")
            if self.output_box.dim != self.p:
                raise InvalidInputError(
                    f"output_box dimension {self.output_box.dim} does not match p={self.p}"
                )
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps < 0.0:
            raise InvalidInputError(f"epsilon must be finite and >= 0, got {eps}")
        object.__setattr__(self, "epsilon", eps)
        rt = float(self.rel_tol)
        if not (0.0 < rt < 1.0):
            raise InvalidInputError(f"rel_tol must lie in (0, 1), got {rt}")
        object.__setattr__(self, "rel_tol", rt)


@dataclass(frozen=True)
class DataWindow:
    """The T most recent input and output samples, oldest first."""

    u: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = as_matrix(self.u, "window inputs")
        y = as_matrix(self.y, "window outputs")
        if u.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"window inputs and outputs must have equal length, got "
                f"{u.shape[0]} and {y.shape[0]}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def length(self) -> int:
        return self.u.shape[0]


def update_window(window: DataWindow, u_new, y_new) -> DataWindow:
    """Slide the window one step: drop the oldest sample, append the new one."""
    if not isinstance(window, DataWindow):
        raise InvalidInputError("update_window expects a DataWindow")
    u_new = np.atleast_1d(np.asarray(u_new, dtype=float))
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    if u_new.shape != (window.u.shape[1],) or y_new.shape != (window.y.shape[1],):
        raise InvalidInputError("new samples do not match the window dimensions")
    return DataWindow(
        u=np.vstack([window.u[1:], u_new]),
        y=np.vstack([window.y[1:], y_new]),
    )


@dataclass(frozen=True)
class InputHalfspace:
    """One linear constraint ``coef @ u_bar_0 <= bound`` on the first input."""

    coef: np.ndarray
    bound: float

    @classmethod
    def from_parts(cls, a, c: float, sense: str, margin: float) -> "InputHalfspace":
        """Build from hyperplane data: ``a @ u + c >= margin`` (sense '>=')
        or ``a @ u + c <= -margin`` (sense '<=')."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if sense == ">=":
            return cls(coef=-a, bound=float(c) - float(margin))
        if sense == "<=":
            return cls(coef=a.copy(), bound=-float(margin) - float(c))
        raise InvalidInputError(f"sense must be '>=' or '<=', got {sense!r}")


@dataclass(frozen=True)
class VariableLayout:
    """Index bookkeeping for the stacked decision vector (u_bar, y_bar, alpha, sigma)."""

    N: int
    n: int
    m: int
    p: int
    num_alpha: int

    @property
    def horizon(self) -> int:
        return self.N + self.n

    @property
    def u_bar(self) -> slice:
        return slice(0, self.horizon * self.m)

    @property
    def y_bar(self) -> slice:
        start = self.horizon * self.m
        return slice(start, start + self.horizon * self.p)

    @property
    def alpha(self) -> slice:
        start = self.horizon * (self.m + self.p)
        return slice(start, start + self.num_alpha)

    @property
    def sigma(self) -> slice:
        start = self.horizon * (self.m + self.p) + self.num_alpha
        return slice(start, start + self.horizon * self.p)

    @property
    def total(self) -> int:
        return self.horizon * (self.m + 2 * self.p) + self.num_alpha

    def u_slice(self, i: int) -> slice:
        """Slice of ``u_bar_i`` for i in -n..N-1."""
        if not (-self.n <= i < self.N):
            raise InvalidInputError(f"step index {i} outside -{self.n}..{self.N - 1}")
        start = (i + self.n) * self.m
        return slice(start, start + self.m)

    def y_slice(self, i: int) -> slice:
        if not (-self.n <= i < self.N):
            raise InvalidInputError(f"step index {i} outside -{self.n}..{self.N - 1}")
        start = self.horizon * self.m + (i + self.n) * self.p
        return slice(start, start + self.p)


@dataclass(frozen=True)
class OcpInstance:
    """Assembled QP plus the layout needed to read trajectories out of it.

    ``cost_constant`` is the setpoint offset dropped from the quadratic form;
    the true tracking cost is ``qp cost + cost_constant``.
    """

    qp: QpInstance
    layout: VariableLayout
    cost_constant: float


def _recent(values, n: int, dim: int, name: str) -> np.ndarray:
    r = np.asarray(values, dtype=float)
    if r.ndim == 1:
        r = r.reshape(-1, 1)
    if r.shape != (n, dim):
        raise InvalidInputError(f"{name} must have shape ({n}, {dim}), got {r.shape}")
    if not np.isfinite(r).all():
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return r


def assemble_ocp(
    cfg: ControllerConfig,
    window: DataWindow,
    recent_u,
    recent_y,
    extra_halfspace: InputHalfspace | None = None,
    enforce_window_match: bool = True,
) -> OcpInstance:
    """Build the tracking QP from the data window and recent measurements.

    ``recent_u``/``recent_y`` are the n most recent applied inputs and
    measured outputs, which pin the initialization segment.  With
    ``enforce_window_match`` (the receding-horizon case) they must literally
    be the trailing n window samples; the offline baseline passes False
    because its data window never slides.
    """
    if not isinstance(cfg, ControllerConfig):
        raise InvalidInputError("assemble_ocp expects a ControllerConfig")
    if not isinstance(window, DataWindow):
        raise InvalidInputError("assemble_ocp expects a DataWindow")
    N, n, m, p = cfg.N, cfg.n, cfg.m, cfg.p
    if window.u.shape[1] != m or window.y.shape[1] != p:
        raise InvalidInputError(
            f"window dimensions {window.u.shape[1]}/{window.y.shape[1]} do not "
            f"match the configuration's m={m}, p={p}"
        )
    if window.length != cfg.T:
        raise InvalidInputError(
            f"window length {window.length} does not match configured T={cfg.T}"
        )
    horizon = N + n
    if window.length < horizon:
        raise WindowTooShortError(
            f"window length {window.length} is shorter than the prediction "
            f"span N+n = {horizon}"
        )
    ru = _recent(recent_u, n, m, "recent_u")
    ry = _recent(recent_y, n, p, "recent_y")
    if enforce_window_match:
        if not (np.array_equal(ru, window.u[-n:]) and np.array_equal(ry, window.y[-n:])):
            raise InvalidInputError(
                "recent measurements must equal the trailing window samples "
                "(pass enforce_window_match=False for a frozen data window)"
            )

    hu = build_hankel(window.u, horizon)
    hy = build_hankel(window.y, horizon)
    num_alpha = window.length - horizon + 1
    layout = VariableLayout(N=N, n=n, m=m, p=p, num_alpha=num_alpha)
    total = layout.total

    # Quadratic cost.  Only the N predicted steps are weighted; the
    # initialization segment is pinned by equalities, and alpha/sigma carry
    # their own regularization, so the reduced Hessian stays positive
    # definite even though P itself has zero blocks.
    big_p = np.zeros((total, total))
    q_vec = np.zeros(total)
    two_r, two_q = 2.0 * cfg.R, 2.0 * cfg.Q
    ru_lin = -two_r @ cfg.u_setpoint
    ry_lin = -two_q @ cfg.y_setpoint
    for i in range(N):
        us = layout.u_slice(i)
        ys = layout.y_slice(i)
        big_p[us, us] = two_r
        big_p[ys, ys] = two_q
        q_vec[us] = ru_lin
        q_vec[ys] = ry_lin
    al = layout.alpha
    sg = layout.sigma
    big_p[al, al] = 2.0 * cfg.lambda_alpha * np.eye(num_alpha)
    big_p[sg, sg] = 2.0 * cfg.lambda_sigma * np.eye(horizon * p)
    cost_constant = N * float(
        cfg.u_setpoint @ cfg.R @ cfg.u_setpoint + cfg.y_setpoint @ cfg.Q @ cfg.y_setpoint
    )

    # Equalities: dynamics, initialization, terminal setpoint hold.
    nu, ny = horizon * m, horizon * p
    rows_eq = nu + ny + 2 * (n * m + n * p)
    a_eq = np.zeros((rows_eq, total))
    b_eq = np.zeros(rows_eq)
    r0 = 0
    a_eq[r0 : r0 + nu, layout.u_bar] = np.eye(nu)
    a_eq[r0 : r0 + nu, al] = -hu
    r0 += nu
    a_eq[r0 : r0 + ny, layout.y_bar] = np.eye(ny)
    a_eq[r0 : r0 + ny, sg] = np.eye(ny)
    a_eq[r0 : r0 + ny, al] = -hy
    r0 += ny
    for j, i in enumerate(range(-n, 0)):
        a_eq[r0 + j * m : r0 + (j + 1) * m, layout.u_slice(i)] = np.eye(m)
        b_eq[r0 + j * m : r0 + (j + 1) * m] = ru[j]
    r0 += n * m
    for j, i in enumerate(range(-n, 0)):
        a_eq[r0 + j * p : r0 + (j + 1) * p, layout.y_slice(i)] = np.eye(p)
        b_eq[r0 + j * p : r0 + (j + 1) * p] = ry[j]
    r0 += n * p
    for j, i in enumerate(range(N - n, N)):
        a_eq[r0 + j * m : r0 + (j + 1) * m, layout.u_slice(i)] = np.eye(m)
        b_eq[r0 + j * m : r0 + (j + 1) * m] = cfg.u_setpoint
    r0 += n * m
    for j, i in enumerate(range(N - n, N)):
        a_eq[r0 + j * p : r0 + (j + 1) * p, layout.y_slice(i)] = np.eye(p)
        b_eq[r0 + j * p : r0 + (j + 1) * p] = cfg.y_setpoint

    # Inequalities: input box rows (upper then lower) over the N predicted
    # steps, output box rows if bounded, then the optional excitation row.
    g_rows = []
    h_vals = []

    def add_box(box: Box | None, index_of, dim: int):
        if box is None:
            return
        for bound, sign in ((box.upper, 1.0), (box.lower, -1.0)):
            for i in range(N):
                sl = index_of(i)
                for j in range(dim):
                    if not np.isfinite(bound[j]):
                        continue
                    row = np.zeros(total)
                    row[sl.start + j] = sign
                    g_rows.append(row)
                    h_vals.append(sign * bound[j])

    add_box(cfg.input_box, layout.u_slice, m)
    add_box(cfg.output_box, layout.y_slice, p)
    if extra_halfspace is not None:
        if not isinstance(extra_halfspace, InputHalfspace):
            raise InvalidInputError("extra_halfspace must be an InputHalfspace")
        coef = np.atleast_1d(np.asarray(extra_halfspace.coef, dtype=float))
        if coef.shape != (m,) or not np.isfinite(coef).all():
            raise InvalidInputError(
                f"extra_halfspace.coef must be a finite vector of length {m}"
            )
        row = np.zeros(total)
        row[layout.u_slice(0)] = coef
        g_rows.append(row)
        h_vals.append(float(extra_halfspace.bound))

    g_mat = np.vstack(g_rows) if g_rows else None
    h_vec = np.asarray(h_vals) if h_vals else None
    qp = QpInstance(P=big_p, q=q_vec, A=a_eq, b=b_eq, G=g_mat, h=h_vec)
    return OcpInstance(qp=qp, layout=layout, cost_constant=cost_constant)


class Branch(Enum):
    UNCONSTRAINED = "unconstrained"
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class BranchRecord:
    """Status and cost of one branch solve (cost is NaN unless optimal)."""

    status: QpStatus
    cost: float
    iterations: int


@dataclass(frozen=True)
class BranchOutcome:
    """Result of one controller step's branch race.

    ``v`` is the binary branch indicator: 0 for the up branch
    (a @ u + c >= margin), 1 for down, None when no excitation constraint was
    enforced.  ``cost`` includes the constant setpoint offset.  ``per_branch``
    records the decisive attempt for each branch that was solved.
    ``epsilon_used`` is the margin parameter actually enforced (after any
    halvings); ``excitation_warning`` marks the emergency unconstrained
    fallback.
    """

    chosen_branch: Branch
    v: int | None
    u_applied: np.ndarray
    cost: float
    per_branch: dict[str, BranchRecord]
    epsilon_used: float | None
    fallback_halvings: int
    excitation_warning: bool
    solution: QpSolution = field(repr=False)
    layout: VariableLayout = field(repr=False)


def _record(sol: QpSolution, cost_constant: float) -> BranchRecord:
    cost = sol.cost + cost_constant if sol.status is QpStatus.OPTIMAL else float("nan")
    return BranchRecord(status=sol.status, cost=cost, iterations=sol.iterations)


def _halfspace_row(layout: VariableLayout, hs: InputHalfspace) -> tuple[np.ndarray, float]:
    """Lift a first-input half-space to a full-width inequality row."""
    coef = np.atleast_1d(np.asarray(hs.coef, dtype=float))
    if coef.shape != (layout.m,) or not np.isfinite(coef).all():
        raise InvalidInputError(
            f"half-space coefficients must be a finite vector of length {layout.m}"
        )
    row = np.zeros(layout.total)
    row[layout.u_slice(0)] = coef
    return row, float(hs.bound)


def _unconstrained_outcome(
    prepared: PreparedQp, ocp: OcpInstance, warning: bool, halvings: int
) -> BranchOutcome:
    sol = prepared.solve()
    if sol.status is not QpStatus.OPTIMAL:
        raise NoFeasibleInputError(
            f"unconstrained step problem ended {sol.status.value}"
        )
    return BranchOutcome(
        chosen_branch=Branch.UNCONSTRAINED,
        v=None,
        u_applied=sol.z[ocp.layout.u_slice(0)].copy(),
        cost=sol.cost + ocp.cost_constant,
        per_branch={"unconstrained": _record(sol, ocp.cost_constant)},
        epsilon_used=None,
        fallback_halvings=halvings,
        excitation_warning=warning,
        solution=sol,
        layout=ocp.layout,
    )


def solve_branches(
    cfg: ControllerConfig,
    window: DataWindow,
    recent_u,
    recent_y,
    geometry: ExcitationGeometry | None,
    need_pe: bool,
) -> BranchOutcome:
    """Solve the step's QP, with the two-half-space race when ``need_pe``.

    The equality structure, cost factorization and box rows are shared by
    both branches, so they are prepared once and each branch adds only its
    own half-space row; the two branch solves are dispatched to concurrent
    workers.  Branch selection: both branches optimal picks the lower cost
    (ties go up); a single optimal branch wins outright.  If neither branch
    is optimal the margin parameter is halved and both are re-solved, up to
    ``MAX_MARGIN_HALVINGS`` times, after which the step runs unconstrained
    with ``excitation_warning`` set.  An infeasible unconstrained problem
    raises :class:`NoFeasibleInputError`, since then no admissible input
    exists at all.
    """
    if need_pe and (geometry is None or geometry.status is not ExcitationStatus.HYPERPLANE):
        raise InvalidInputError("need_pe requires a hyperplane geometry")

    ocp = assemble_ocp(cfg, window, recent_u, recent_y)
    prepared = prepare_qp(ocp.qp)

    if not need_pe:
        return _unconstrained_outcome(prepared, ocp, warning=False, halvings=0)

    for halving in range(MAX_MARGIN_HALVINGS + 1):
        eps_k = cfg.epsilon / (2.0 ** halving)
        pair = pe_constraint_pair(geometry, eps_k)
        rows = {
            "up": _halfspace_row(
                ocp.layout, InputHalfspace.from_parts(pair.a, pair.c, ">=", pair.margin)
            ),
            "down": _halfspace_row(
                ocp.layout, InputHalfspace.from_parts(pair.a, pair.c, "<=", pair.margin)
            ),
        }
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = {
                name: pool.submit(prepared.solve, row, rhs)
                for name, (row, rhs) in rows.items()
            }
            sols = {name: fut.result() for name, fut in futures.items()}
        records = {name: _record(sols[name], ocp.cost_constant) for name in sols}
        optimal = [name for name in ("up", "down") if sols[name].status is QpStatus.OPTIMAL]
        if not optimal:
            continue
        if len(optimal) == 2:
            cu, cd = records["up"].cost, records["down"].cost
            if cd < cu - BRANCH_TIE_TOL * (1.0 + abs(cu) + abs(cd)):
                choice = "down"
            else:
                choice = "up"
        else:
            choice = optimal[0]
        sol = sols[choice]
        return BranchOutcome(
            chosen_branch=Branch.UP if choice == "up" else Branch.DOWN,
            v=0 if choice == "up" else 1,
            u_applied=sol.z[ocp.layout.u_slice(0)].copy(),
            cost=records[choice].cost,
            per_branch=records,
            epsilon_used=eps_k,
            fallback_halvings=halving,
            excitation_warning=False,
            solution=sol,
            layout=ocp.layout,
        )

    # Both branches stayed infeasible at every margin: solve unconstrained
    # and mark the step so callers can see excitation was not enforced.
    return _unconstrained_outcome(
        prepared, ocp, warning=True, halvings=MAX_MARGIN_HALVINGS
    )


@dataclass(frozen=True)
class StepDiagnostics:
    """Everything a log wants to know about one controller step."""

    geometry_status: ExcitationStatus | None
    sigma_min: float
    rank_found: int
    hyperplane_hits_box: bool | None
    pe_enforced: bool
    branch: Branch
    v: int | None
    cost: float
    epsilon_used: float | None
    fallback_halvings: int
    excitation_warning: bool
    qp_iterations: int


def controller_step(cfg: ControllerConfig, window: DataWindow) -> tuple[np.ndarray, StepDiagnostics]:
    """One step of the excitation-maintaining receding-horizon controller.

    Classifies the trailing window, decides whether the next input must keep
    its distance from a nonexciting hyperplane (only when that hyperplane
    actually crosses the input box), solves the branch race, and returns the
    input to apply plus diagnostics.

    Raises :class:`LostExcitationError` when the window is already rank
    deficient beyond what one sample can repair.
    """
    if not isinstance(cfg, ControllerConfig):
        raise InvalidInputError("controller_step expects a ControllerConfig")
    if not isinstance(window, DataWindow):
        raise InvalidInputError("controller_step expects a DataWindow")
    if window.length != cfg.T:
        raise InvalidInputError(
            f"window length {window.length} does not match configured T={cfg.T}"
        )
    blocks = hankel_blocks(window.u[1:], cfg.pe_order)
    geometry = excitation_geometry(blocks, rel_tol=cfg.rel_tol)
    watchdog_status = geometry.status
    if watchdog_status is not ExcitationStatus.FULL_RANK:
        # The watchdog tolerance decides when to intervene; whether
        # excitation is truly lost is judged at the strict verification
        # tolerance.  Conflating the two makes the controller abort on
        # windows that are merely ill conditioned but still verifiably
        # exciting, exactly the situation the margin constraint exists to
        # repair.
        strict = excitation_geometry(blocks, rel_tol=VERIFICATION_RTOL)
        if strict.status is ExcitationStatus.DEFICIENT:
            raise LostExcitationError(
                f"input window rank {strict.rank_found} is more than one below "
                f"full ({cfg.m * cfg.pe_order}); no single input can restore "
                "excitation"
            )
        if watchdog_status is ExcitationStatus.DEFICIENT:
            # Several directions have degraded below the watchdog threshold.
            # Repair the weakest one this step; subsequent steps pick up the
            # rest one at a time.
            geometry = near_loss_geometry(blocks, rel_tol=cfg.rel_tol)
    hits_box: bool | None = None
    if geometry.status is ExcitationStatus.HYPERPLANE:
        hits_box = intersects_input_set(geometry, cfg.input_box)
    need_pe = bool(hits_box)
    outcome = solve_branches(
        cfg, window, window.u[-cfg.n :], window.y[-cfg.n :], geometry, need_pe
    )
    diag = StepDiagnostics(
        geometry_status=watchdog_status,
        sigma_min=geometry.sigma_min,
        rank_found=geometry.rank_found,
        hyperplane_hits_box=hits_box,
        pe_enforced=need_pe,
        branch=outcome.chosen_branch,
        v=outcome.v,
        cost=outcome.cost,
        epsilon_used=outcome.epsilon_used,
        fallback_halvings=outcome.fallback_halvings,
        excitation_warning=outcome.excitation_warning,
        qp_iterations=outcome.solution.iterations,
    )
    return outcome.u_applied, diag


class BaselineController:
    """Fixed-data controller that reuses one factorization across steps.

    The baseline never changes its Hankel data, so between steps only the
    measurement right-hand side of the QP moves; the expensive shared
    factorizations are built on the first step and rebound afterwards.
    Functionally identical to calling :func:`baseline_p0_step` every step.
    """

    def __init__(self, cfg: ControllerConfig, data: DataWindow):
        if not isinstance(cfg, ControllerConfig):
            raise InvalidInputError("BaselineController expects a ControllerConfig")
        if not isinstance(data, DataWindow):
            raise InvalidInputError("BaselineController expects a DataWindow")
        self.cfg = cfg
        self.data = data
        self._prepared: PreparedQp | None = None

    def step(self, recent_u, recent_y) -> tuple[np.ndarray, StepDiagnostics]:
        ocp = assemble_ocp(
            self.cfg, self.data, recent_u, recent_y, enforce_window_match=False
        )
        if self._prepared is None:
            self._prepared = prepare_qp(ocp.qp)
        else:
            self._prepared = self._prepared.with_rhs(ocp.qp.b)
        sol = self._prepared.solve()
        if sol.status is not QpStatus.OPTIMAL:
            raise NoFeasibleInputError(
                f"baseline step problem ended {sol.status.value}"
            )
        diag = StepDiagnostics(
            geometry_status=None,
            sigma_min=float("nan"),
            rank_found=-1,
            hyperplane_hits_box=None,
            pe_enforced=False,
            branch=Branch.UNCONSTRAINED,
            v=None,
            cost=sol.cost + ocp.cost_constant,
            epsilon_used=None,
            fallback_halvings=0,
            excitation_warning=False,
            qp_iterations=sol.iterations,
        )
        return sol.z[ocp.layout.u_slice(0)].copy(), diag


def baseline_p0_step(
    cfg: ControllerConfig,
    data: DataWindow,
    recent_u,
    recent_y,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One step of the fixed-data baseline controller.

    Same QP as the receding-horizon controller but the Hankel data never
    changes and no excitation constraint is ever added.  The caller is
    responsible for having checked, once, that ``data`` is persistently
    exciting of order N + 2n.
    """
    return BaselineController(cfg, data).step(recent_u, recent_y)
