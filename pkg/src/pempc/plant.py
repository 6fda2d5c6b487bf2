"""Simulation plants and closed-loop benchmark drivers.

The reference plant is a linearized four-tank process with two pump inputs
and two level outputs.  Its input matrix may drift over time (case 2), which
is what eventually starves a fixed-data controller: the offline window stops
describing the plant, while the sliding-window controller keeps learning but
risks losing excitation as the loop settles.  These drivers run both modes,
log everything a test or plot needs, and aggregate sweeps over seeds and
margin parameters.

Reproducibility: the initial excitation uses the counter-based Philox
generator keyed directly by the seed, so the same seed gives the same
experiment on any platform, independent of how many runs came before.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .controller import (
    VERIFICATION_RTOL,
    BaselineController,
    Branch,
    ControllerConfig,
    DataWindow,
    StepDiagnostics,
    controller_step,
    update_window,
)
from .errors import InvalidInputError, PempcError, SimulationDivergedError
from .hankel import build_hankel, pe_condition_metric
from .linalg import as_matrix, numerical_rank

WORKERS_ENV_VAR = "PEMPC_WORKERS"


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time linear plant x+ = A x + B(k) u, y = C x + D u.

    ``B`` is a function of the step index so slowly drifting actuators can be
    modeled; for a time-invariant plant pass a constant function.
    """

    A: np.ndarray = field(repr=False)
    B: Callable[[int], np.ndarray] = field(repr=False)
    C: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = as_matrix(self.A, "A")
        if a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"A must be square, got {a.shape}")
        nx = a.shape[0]
        c = as_matrix(self.C, "C")
        if c.shape[1] != nx:
            raise InvalidInputError(f"C must have {nx} columns, got {c.shape}")
        d = as_matrix(self.D, "D")
        if d.shape[0] != c.shape[0]:
            raise InvalidInputError(f"D must have {c.shape[0]} rows, got {d.shape}")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (nx,) or not np.isfinite(x0).all():
            raise InvalidInputError(f"x0 must be a finite vector of length {nx}")
        if not callable(self.B):
            raise InvalidInputError("B must be callable: step index -> input matrix")
        b0 = as_matrix(self.B(0), "B(0)")
        if b0.shape != (nx, d.shape[1]):
            raise InvalidInputError(
                f"B(k) must have shape ({nx}, {d.shape[1]}), got {b0.shape}"
            )
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "D", d)
        object.__setattr__(self, "x0", x0)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.D.shape[1]

    @property
    def output_dim(self) -> int:
        return self.C.shape[0]


def plant_step(model: PlantModel, x, u, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Advance one step: returns (x_next, y) where y is measured at x before
    the update.  Raises :class:`SimulationDivergedError` on non-finite values."""
    if not isinstance(model, PlantModel):
        raise InvalidInputError("plant_step expects a PlantModel")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (model.state_dim,):
        raise InvalidInputError(f"state must have length {model.state_dim}")
    if u.shape != (model.input_dim,):
        raise InvalidInputError(f"input must have length {model.input_dim}")
    y = model.C @ x + model.D @ u
    x_next = model.A @ x + np.asarray(model.B(k), dtype=float) @ u
    if not (np.isfinite(x_next).all() and np.isfinite(y).all()):
        raise SimulationDivergedError(f"non-finite plant values at step {k}")
    return x_next, y


# Four-tank linearization: tanks 3 and 4 drain into tanks 1 and 2, pumps
# feed the pairs cross-wise, and only the two lower levels are measured.
_FOUR_TANK_A = np.array(
    [
        [0.921, 0.0, 0.041, 0.0],
        [0.0, 0.918, 0.0, 0.033],
        [0.0, 0.0, 0.924, 0.0],
        [0.0, 0.0, 0.0, 0.937],
    ]
)
_FOUR_TANK_C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
_FOUR_TANK_X0 = np.array([0.4, 0.4, 0.0, 0.0])

FOUR_TANK_DELTA = 0.017
FOUR_TANK_DRIFT = 1e-5


def four_tank_model(case: int) -> PlantModel:
    """The benchmark plant.  Case 1 is time invariant; case 2 drifts one pump
    gain by ``FOUR_TANK_DRIFT`` per step starting from the same value."""
    if case not in (1, 2):
        raise InvalidInputError(f"case must be 1 or 2, got {case}")

    def b_of_k(k: int) -> np.ndarray:
        delta = FOUR_TANK_DELTA + (FOUR_TANK_DRIFT * k if case == 2 else 0.0)
        return np.array(
            [
                [delta, 0.001],
                [0.001, 0.023],
                [0.0, 0.061],
                [0.072, 0.0],
            ]
        )

    return PlantModel(
        A=_FOUR_TANK_A.copy(),
        B=b_of_k,
        C=_FOUR_TANK_C.copy(),
        D=np.zeros((2, 2)),
        x0=_FOUR_TANK_X0.copy(),
    )


def initial_excitation(seed: int, length: int, dim: int, low=0.0, high=1.0) -> np.ndarray:
    """Uniform random excitation, bit-reproducible from the seed alone.

    ``low``/``high`` may be scalars or per-coordinate vectors.
    """
    if length < 1 or dim < 1:
        raise InvalidInputError("length and dim must be positive")
    lo = np.broadcast_to(np.asarray(low, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(high, dtype=float), (dim,))
    if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (lo <= hi).all()):
        raise InvalidInputError("excitation range must be finite with low <= high")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.uniform(lo, hi, size=(length, dim))


class RunMode(Enum):
    """P0 solves on the frozen offline window; P1 slides its window and
    enforces the excitation constraint."""

    P0_BASELINE = "p0"
    P1_ALGORITHM1 = "p1"


@dataclass
class ClosedLoopLog:
    """Complete per-step record of one closed-loop run.

    Step index k runs 1..N_s; steps 1..T apply the random excitation, the
    controller takes over at T+1.  ``pe_rank`` and ``condition_metric``
    describe the window of the T most recent inputs ending at step k and are
    only defined from k = T on (-1 / NaN before); the rank is judged at the
    strict verification tolerance, while ``geometry_status``/``sigma_min``
    reflect the controller's configurable watchdog view.  ``wall_time`` is
    the controller's per-step compute time; it is diagnostic only and is
    never serialized, so identical runs produce identical files.

    If a run aborts, ``failure`` holds the reason, ``failed_at_step`` the
    step, and all arrays are truncated to the completed steps.
    """

    mode: RunMode
    seed: int
    epsilon: float
    case: int | None
    T: int
    steps: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    cost: np.ndarray = field(repr=False)
    geometry_status: list = field(repr=False)
    hyperplane_hits_box: list = field(repr=False)
    branch: list = field(repr=False)
    v: list = field(repr=False)
    epsilon_used: np.ndarray = field(repr=False)
    excitation_warning: np.ndarray = field(repr=False)
    sigma_min: np.ndarray = field(repr=False)
    pe_rank: np.ndarray = field(repr=False)
    condition_metric: np.ndarray = field(repr=False)
    wall_time: np.ndarray = field(repr=False)
    failure: str | None = None
    failed_at_step: int | None = None

    @property
    def num_steps(self) -> int:
        return self.steps.size


def run_closed_loop(
    model: PlantModel,
    cfg: ControllerConfig,
    mode: RunMode,
    seed: int,
    total_steps: int,
    init_low=0.0,
    init_high=1.0,
    case: int | None = None,
) -> ClosedLoopLog:
    """Run one experiment: T excitation steps, then closed-loop control.

    Controller and plant errors do not propagate; they are recorded in the
    returned log (``failure``/``failed_at_step``) together with every step
    completed up to that point.
    """
    if not isinstance(model, PlantModel):
        raise InvalidInputError("run_closed_loop expects a PlantModel")
    if not isinstance(cfg, ControllerConfig):
        raise InvalidInputError("run_closed_loop expects a ControllerConfig")
    if not isinstance(mode, RunMode):
        mode = RunMode(mode)
    if model.input_dim != cfg.m or model.output_dim != cfg.p:
        raise InvalidInputError(
            "plant input/output dimensions do not match the controller config"
        )
    t_win = cfg.T
    if total_steps < t_win:
        raise InvalidInputError(
            f"total_steps={total_steps} is shorter than the data window T={t_win}"
        )

    u_init = initial_excitation(seed, t_win, cfg.m, init_low, init_high)
    nx = model.state_dim
    ns = total_steps

    steps = np.arange(1, ns + 1)
    x_log = np.zeros((ns, nx))
    u_log = np.zeros((ns, cfg.m))
    y_log = np.zeros((ns, cfg.p))
    cost = np.full(ns, np.nan)
    geometry_status: list = [None] * ns
    hits_box: list = [None] * ns
    branch: list = [None] * ns
    v_log: list = [None] * ns
    eps_used = np.full(ns, np.nan)
    warn = np.zeros(ns, dtype=bool)
    sigma_min = np.full(ns, np.nan)
    pe_rank = np.full(ns, -1, dtype=int)
    cond_metric = np.full(ns, np.nan)
    wall = np.zeros(ns)

    window: DataWindow | None = None
    baseline: BaselineController | None = None
    x = model.x0.copy()
    failure = None
    failed_at = None
    done = 0

    order = cfg.pe_order

    for k in range(1, ns + 1):
        i = k - 1
        tic = time.perf_counter()
        try:
            if k <= t_win:
                u_k = u_init[i]
                diag: StepDiagnostics | None = None
            elif mode is RunMode.P1_ALGORITHM1:
                u_k, diag = controller_step(cfg, window)
            else:
                if baseline is None:
                    # Certifying the offline data is a yes/no question, judged
                    # at the strict verification tolerance; the configurable
                    # watchdog tolerance only decides when the sliding-window
                    # controller intervenes.
                    ok, report = _offline_pe_check(window, order, VERIFICATION_RTOL)
                    if not ok:
                        raise PempcError(
                            f"offline data is not persistently exciting of order "
                            f"{order} (rank {report.numerical_rank})"
                        )
                    baseline = BaselineController(cfg, window)
                u_k, diag = baseline.step(window.u[-cfg.n :], window.y[-cfg.n :])
            x_next, y_k = plant_step(model, x, u_k, k)
        except PempcError as exc:
            failure = f"{type(exc).__name__}: {exc}"
            failed_at = k
            break

        x_log[i] = x
        u_log[i] = u_k
        y_log[i] = y_k
        if diag is not None:
            cost[i] = diag.cost
            geometry_status[i] = (
                diag.geometry_status.value if diag.geometry_status else None
            )
            hits_box[i] = diag.hyperplane_hits_box
            branch[i] = diag.branch.value
            v_log[i] = diag.v
            eps_used[i] = np.nan if diag.epsilon_used is None else diag.epsilon_used
            warn[i] = diag.excitation_warning
            sigma_min[i] = diag.sigma_min

        if k == t_win:
            window = DataWindow(u=u_init.copy(), y=y_log[:t_win].copy())
        elif k > t_win:
            window = update_window(window, u_k, y_k)
        if k >= t_win:
            report = numerical_rank(
                build_hankel(window.u, order), rel_tol=VERIFICATION_RTOL
            )
            pe_rank[i] = report.numerical_rank
            cond_metric[i] = pe_condition_metric(window.u, order)

        x = x_next
        wall[i] = time.perf_counter() - tic
        done = k

    sl = slice(0, done)
    return ClosedLoopLog(
        mode=mode,
        seed=seed,
        epsilon=cfg.epsilon,
        case=case,
        T=t_win,
        steps=steps[sl],
        x=x_log[sl],
        u=u_log[sl],
        y=y_log[sl],
        cost=cost[sl],
        geometry_status=geometry_status[:done],
        hyperplane_hits_box=hits_box[:done],
        branch=branch[:done],
        v=v_log[:done],
        epsilon_used=eps_used[sl],
        excitation_warning=warn[sl],
        sigma_min=sigma_min[sl],
        pe_rank=pe_rank[sl],
        condition_metric=cond_metric[sl],
        wall_time=wall[sl],
        failure=failure,
        failed_at_step=failed_at,
    )


def _offline_pe_check(window: DataWindow, order: int, rel_tol: float):
    report = numerical_rank(build_hankel(window.u, order), rel_tol=rel_tol)
    return report.numerical_rank == window.u.shape[1] * order, report


@dataclass(frozen=True)
class RunMetrics:
    """Summary numbers for one run over its final window."""

    mean_tracking_error: float
    max_tracking_error: float
    pe_fraction: float
    cond_mean: float
    cond_min: float
    cond_max: float


def metrics(log: ClosedLoopLog, cfg: ControllerConfig, final_window: int) -> RunMetrics:
    """Summaries over the last ``final_window`` completed steps.

    Tracking error is the per-step infinity norm of y - y_setpoint.
    ``pe_fraction`` is the share of steps with full-rank windows among all
    steps where the window rank was evaluated (k >= T).
    """
    if not isinstance(log, ClosedLoopLog):
        raise InvalidInputError("metrics expects a ClosedLoopLog")
    if final_window < 1 or final_window > log.num_steps:
        raise InvalidInputError(
            f"final_window must lie in 1..{log.num_steps}, got {final_window}"
        )
    tail = slice(log.num_steps - final_window, log.num_steps)
    err = np.abs(log.y[tail] - cfg.y_setpoint).max(axis=1)
    evaluated = log.pe_rank >= 0
    full = cfg.m * cfg.pe_order
    pe_fraction = (
        float(np.mean(log.pe_rank[evaluated] == full)) if evaluated.any() else float("nan")
    )
    cond_tail = log.condition_metric[tail]
    cond_tail = cond_tail[np.isfinite(cond_tail)]
    if cond_tail.size:
        cond_stats = (float(cond_tail.mean()), float(cond_tail.min()), float(cond_tail.max()))
    else:
        cond_stats = (float("inf"), float("inf"), float("inf"))
    return RunMetrics(
        mean_tracking_error=float(err.mean()),
        max_tracking_error=float(err.max()),
        pe_fraction=pe_fraction,
        cond_mean=cond_stats[0],
        cond_min=cond_stats[1],
        cond_max=cond_stats[2],
    )


@dataclass(frozen=True)
class CellSummary:
    """One (seed, epsilon) cell of a sweep."""

    seed: int
    epsilon: float
    ok: bool
    failure: str | None
    run_metrics: RunMetrics | None


@dataclass(frozen=True)
class EpsilonSummary:
    """Condition-metric statistics aggregated across seeds at one epsilon.

    ``cond_mean`` averages the per-run means, ``cond_min``/``cond_max`` take
    the extremes across runs.
    """

    epsilon: float
    cond_mean: float
    cond_min: float
    cond_max: float
    mean_tracking_error: float
    runs: int
    failures: int


@dataclass(frozen=True)
class SweepReport:
    case: int
    mode: RunMode
    total_steps: int
    cells: list[CellSummary]
    per_epsilon: list[EpsilonSummary]

    @property
    def all_ok(self) -> bool:
        return all(cell.ok for cell in self.cells)


def _sweep_cell(args) -> CellSummary:
    case, cfg_args, mode_value, seed, epsilon, total_steps = args
    cfg = ControllerConfig(**{**cfg_args, "epsilon": epsilon})
    model = four_tank_model(case)
    log = run_closed_loop(model, cfg, RunMode(mode_value), seed, total_steps, case=case)
    if log.failure is not None:
        return CellSummary(
            seed=seed, epsilon=epsilon, ok=False, failure=log.failure, run_metrics=None
        )
    return CellSummary(
        seed=seed,
        epsilon=epsilon,
        ok=True,
        failure=None,
        run_metrics=metrics(log, cfg, final_window=cfg.T),
    )


def resolve_workers(workers: int | None) -> int:
    """Worker count for sweeps: explicit argument, else the PEMPC_WORKERS
    environment variable, else the machine's CPU count."""
    if workers is not None:
        if workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {workers}")
        return workers
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise InvalidInputError(
                f"{WORKERS_ENV_VAR} must be an integer, got {env!r}"
            ) from exc
        if value < 1:
            raise InvalidInputError(f"{WORKERS_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def sweep(
    case: int,
    cfg: ControllerConfig,
    seeds,
    epsilons,
    total_steps: int,
    mode: RunMode = RunMode.P1_ALGORITHM1,
    workers: int | None = None,
) -> SweepReport:
    """Run the full (seed, epsilon) grid and aggregate per-epsilon statistics.

    Cells are independent closed-loop runs, distributed over a process pool
    when more than one worker is available.  A failed cell (lost excitation,
    infeasibility, divergence) is recorded, not raised; per-epsilon summaries
    aggregate over the cells that completed.
    """
    seeds = [int(s) for s in np.atleast_1d(seeds)]
    epsilons = [float(e) for e in np.atleast_1d(epsilons)]
    if not seeds or not epsilons:
        raise InvalidInputError("sweep needs at least one seed and one epsilon")
    if len(set(seeds)) != len(seeds) or len(set(epsilons)) != len(epsilons):
        raise InvalidInputError("seeds and epsilons must not repeat")
    if any(e < 0 for e in epsilons):
        raise InvalidInputError("epsilons must be >= 0")
    if not isinstance(mode, RunMode):
        mode = RunMode(mode)

    cfg_args = dict(
        N=cfg.N, n=cfg.n, T=cfg.T, m=cfg.m, p=cfg.p, Q=cfg.Q, R=cfg.R,
        lambda_alpha=cfg.lambda_alpha, lambda_sigma=cfg.lambda_sigma,
        u_setpoint=cfg.u_setpoint, y_setpoint=cfg.y_setpoint,
        input_box=cfg.input_box, output_box=cfg.output_box,
        epsilon=cfg.epsilon, rel_tol=cfg.rel_tol, pe_order=cfg.pe_order,
    )
    tasks = [
        (case, cfg_args, mode.value, seed, eps, total_steps)
        for eps in epsilons
        for seed in seeds
    ]
    nworkers = min(resolve_workers(workers), len(tasks))
    if nworkers > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            cells = list(pool.map(_sweep_cell, tasks))
    else:
        cells = [_sweep_cell(task) for task in tasks]

    per_eps = []
    for eps in epsilons:
        group = [c for c in cells if c.epsilon == eps]
        good = [c.run_metrics for c in group if c.ok]
        if good:
            per_eps.append(
                EpsilonSummary(
                    epsilon=eps,
                    cond_mean=float(np.mean([g.cond_mean for g in good])),
                    cond_min=float(np.min([g.cond_min for g in good])),
                    cond_max=float(np.max([g.cond_max for g in good])),
                    mean_tracking_error=float(np.mean([g.mean_tracking_error for g in good])),
                    runs=len(group),
                    failures=len(group) - len(good),
                )
            )
        else:
            per_eps.append(
                EpsilonSummary(
                    epsilon=eps,
                    cond_mean=float("nan"),
                    cond_min=float("nan"),
                    cond_max=float("nan"),
                    mean_tracking_error=float("nan"),
                    runs=len(group),
                    failures=len(group),
                )
            )
    return SweepReport(
        case=case, mode=mode, total_steps=total_steps, cells=cells, per_epsilon=per_eps
    )
