"""Hankel matrices and the geometry of persistence of excitation.

For an m-channel signal u of length T, the depth-L Hankel matrix stacks the
sliding length-L subwindows as columns:

    H_L(u)[i*m:(i+1)*m, j] = u[i + j],   i = 0..L-1,  j = 0..T-L.

The signal is persistently exciting (PE) of order L exactly when H_L(u) has
full row rank m*L.

The key object here is the *trailing-window decomposition*: given the last
T - 1 samples u[k-T+1 .. k-1] and the unknown next sample u_k, the full
Hankel matrix of the updated window splits into

    [ h11  h12 ]
    [ h21  u_k ]

where only the bottom-right m-by-1 corner depends on u_k.  When the known
part has rank m*L - 1, the set of next inputs that FAIL to restore full rank
is a hyperplane {u : a @ u + c == 0}; everything off that hyperplane repairs
excitation.  :func:`excitation_geometry` classifies the window and returns
the hyperplane, :func:`pe_constraint_pair` turns it into the two margin
half-spaces the controller enforces, and :func:`intersects_input_set` decides
whether the hyperplane even passes through the admissible input box (if it
does not, no constraint is needed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ExcitationImpossibleError,
    InvalidInputError,
    MisuseError,
    WindowTooShortError,
)
from .linalg import (
    DEFAULT_RANK_RTOL,
    RankReport,
    condition_number,
    left_null_vector,
    numerical_rank,
)

# Slack applied on both sides of the box intersection test so that a
# hyperplane exactly grazing a box corner counts as intersecting.
INTERSECT_SLACK = 1e-12


def as_signal(samples, name: str = "signal") -> np.ndarray:
    """Validate ``samples`` as a (T, m) finite float array.

    One-dimensional input is treated as a single-channel signal and reshaped
    to (T, 1).
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s.reshape(-1, 1)
    if s.ndim != 2:
        raise InvalidInputError(f"{name} must be 1-D or 2-D, got ndim={s.ndim}")
    if s.shape[0] < 1 or s.shape[1] < 1:
        raise InvalidInputError(f"{name} must be nonempty, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return s


def build_hankel(samples, depth: int) -> np.ndarray:
    """Depth-``depth`` block Hankel matrix of a (T, m) signal.

    Returns an (m*depth, T - depth + 1) array.  Column j holds the window
    ``samples[j : j + depth]`` stacked channel-wise.
    """
    u = as_signal(samples)
    t, m = u.shape
    if depth < 1:
        raise InvalidInputError(f"depth must be >= 1, got {depth}")
    if t < depth:
        raise WindowTooShortError(
            f"signal of length {t} cannot form a depth-{depth} Hankel matrix"
        )
    cols = t - depth + 1
    return np.vstack([u[i : i + cols].T for i in range(depth)])


@dataclass(frozen=True)
class HankelBlocks:
    """Blocks of the depth-L Hankel matrix of a window plus one unknown sample.

    ``h11`` is m(L-1)-by-(W-L+1), ``h12`` is m(L-1)-by-1, ``h21`` is
    m-by-(W-L+1), where W is the window length.  The missing bottom-right
    corner is the next input sample.
    """

    h11: np.ndarray = field(repr=False)
    h12: np.ndarray = field(repr=False)
    h21: np.ndarray = field(repr=False)
    depth: int
    dim: int

    def stacked(self) -> np.ndarray:
        """The known full-height columns ``[h11; h21]`` (m*L rows)."""
        return np.vstack([self.h11, self.h21])


def hankel_blocks(window, depth: int) -> HankelBlocks:
    """Decompose the trailing window into the known Hankel blocks.

    ``window`` holds the W most recent samples (the updated window will be
    these plus one new sample).  Requires W >= depth so every block is
    nonempty.
    """
    w = as_signal(window, name="window")
    t, m = w.shape
    if depth < 2:
        raise InvalidInputError(f"hankel_blocks needs depth >= 2, got {depth}")
    if t < depth:
        raise WindowTooShortError(
            f"window of length {t} is too short for depth {depth}"
        )
    cols = t - depth + 1
    h11 = np.vstack([w[i : i + cols].T for i in range(depth - 1)])
    h12 = w[cols : cols + depth - 1].reshape(-1, 1)
    h21 = w[depth - 1 : depth - 1 + cols].T
    return HankelBlocks(h11=h11, h12=h12, h21=h21, depth=depth, dim=m)


def is_pe(samples, order: int, rel_tol: float = DEFAULT_RANK_RTOL) -> tuple[bool, RankReport]:
    """Decide persistence of excitation of ``order`` for the whole signal.

    Raises :class:`ExcitationImpossibleError` when the signal is structurally
    too short: length T supports order L only if T >= (m + 1) * L - 1.
    """
    u = as_signal(samples)
    t, m = u.shape
    if order < 1:
        raise InvalidInputError(f"order must be >= 1, got {order}")
    needed = (m + 1) * order - 1
    if t < needed:
        raise ExcitationImpossibleError(
            f"length-{t} signal with {m} channels can never be persistently "
            f"exciting of order {order}; at least {needed} samples are needed"
        )
    report = numerical_rank(build_hankel(u, order), rel_tol=rel_tol)
    return report.numerical_rank == m * order, report


class ExcitationStatus(Enum):
    """Classification of the trailing window's known Hankel columns."""

    FULL_RANK = "full_rank"
    HYPERPLANE = "hyperplane"
    DEFICIENT = "deficient"


@dataclass(frozen=True)
class ExcitationGeometry:
    """What the next input sample must avoid, if anything.

    ``status`` is FULL_RANK when excitation is already guaranteed regardless
    of the next sample, HYPERPLANE when exactly the inputs on
    ``{u : a @ u + c == 0}`` fail to restore it, and DEFICIENT when the window
    is short by two or more rank and no single sample can repair it.  ``a``
    (unit-norm together with its companion block) and ``c`` are only set for
    HYPERPLANE.  ``sigma_min`` is the smallest singular value of the known
    columns and ``rank_found`` their numerical rank.
    """

    status: ExcitationStatus
    a: np.ndarray | None
    c: float | None
    sigma_min: float
    rank_found: int


def excitation_geometry(
    blocks: HankelBlocks, rel_tol: float = DEFAULT_RANK_RTOL
) -> ExcitationGeometry:
    """Classify the window and extract the nonexciting hyperplane if present.

    The full-height known columns ``[h11; h21]`` have m*L rows.  Their rank r
    decides everything:

    * ``r == m*L``: any next sample keeps the window exciting.
    * ``r == m*L - 1``: the left null direction ``z = (b, a)`` is unique up to
      sign, and the next sample fails exactly on the hyperplane
      ``a @ u + b @ h12 == 0``; the offset ``c = b @ h12``.
    * otherwise: deficient.
    """
    if not isinstance(blocks, HankelBlocks):
        raise InvalidInputError("excitation_geometry expects HankelBlocks")
    stacked = blocks.stacked()
    m, full = blocks.dim, blocks.dim * blocks.depth
    report = numerical_rank(stacked, rel_tol=rel_tol)
    rank = report.numerical_rank
    if stacked.shape[1] < full:
        sigma_min = 0.0
    else:
        sigma_min = float(report.singular_values[-1])
    if rank == full:
        return ExcitationGeometry(
            status=ExcitationStatus.FULL_RANK,
            a=None,
            c=None,
            sigma_min=sigma_min,
            rank_found=rank,
        )
    if rank == full - 1:
        z, sigma_min = left_null_vector(stacked)
        b = z[: full - m]
        a = z[full - m :]
        c = float(b @ blocks.h12.ravel())
        return ExcitationGeometry(
            status=ExcitationStatus.HYPERPLANE,
            a=a,
            c=c,
            sigma_min=sigma_min,
            rank_found=rank,
        )
    return ExcitationGeometry(
        status=ExcitationStatus.DEFICIENT,
        a=None,
        c=None,
        sigma_min=sigma_min,
        rank_found=rank,
    )


def near_loss_geometry(
    blocks: HankelBlocks, rel_tol: float = DEFAULT_RANK_RTOL
) -> ExcitationGeometry:
    """Hyperplane of next inputs that fail to lift the window's weakest
    direction, regardless of the window's numerical rank.

    When the known columns are exactly one short of full rank this coincides
    with the hyperplane of :func:`excitation_geometry`.  When several
    singular values have merely degraded below a loose watchdog threshold
    (but excitation is still verifiably present at a strict one), the same
    construction applied to the smallest singular direction identifies the
    single most endangered direction, which is what a controller should
    repair first.  ``rank_found`` reports the rank at ``rel_tol``.
    """
    if not isinstance(blocks, HankelBlocks):
        raise InvalidInputError("near_loss_geometry expects HankelBlocks")
    stacked = blocks.stacked()
    m, full = blocks.dim, blocks.dim * blocks.depth
    report = numerical_rank(stacked, rel_tol=rel_tol)
    z, sigma_min = left_null_vector(stacked)
    b = z[: full - m]
    a = z[full - m :]
    c = float(b @ blocks.h12.ravel())
    return ExcitationGeometry(
        status=ExcitationStatus.HYPERPLANE,
        a=a,
        c=c,
        sigma_min=sigma_min,
        rank_found=report.numerical_rank,
    )


@dataclass(frozen=True)
class HalfSpacePair:
    """The two disjoint half-spaces at distance ``margin / ||a||`` from the
    nonexciting hyperplane.

    An input is admissible when ``a @ u + c >= margin`` (up branch) or
    ``a @ u + c <= -margin`` (down branch).  ``margin == ||a|| * eps`` keeps
    the admitted inputs at Euclidean distance at least eps from the
    hyperplane.
    """

    a: np.ndarray
    c: float
    margin: float

    def satisfies_up(self, u, atol: float = 0.0) -> bool:
        return float(self.a @ np.asarray(u, dtype=float)) + self.c >= self.margin - atol

    def satisfies_down(self, u, atol: float = 0.0) -> bool:
        return float(self.a @ np.asarray(u, dtype=float)) + self.c <= -self.margin + atol


def pe_constraint_pair(geometry: ExcitationGeometry, eps: float) -> HalfSpacePair:
    """Margin half-spaces for a HYPERPLANE geometry.

    Raises :class:`MisuseError` for FULL_RANK or DEFICIENT geometries, where
    no hyperplane exists to keep a distance from.
    """
    if not isinstance(geometry, ExcitationGeometry):
        raise InvalidInputError("pe_constraint_pair expects ExcitationGeometry")
    if geometry.status is not ExcitationStatus.HYPERPLANE:
        raise MisuseError(
            f"no constraint pair exists for {geometry.status.value} geometry"
        )
    if not np.isfinite(eps) or eps < 0.0:
        raise InvalidInputError(f"eps must be finite and >= 0, got {eps}")
    margin = float(np.linalg.norm(geometry.a)) * eps
    return HalfSpacePair(a=geometry.a.copy(), c=float(geometry.c), margin=margin)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with per-coordinate bounds (entries may be infinite)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or hi.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise InvalidInputError(
                f"box bounds must be matching nonempty vectors, got shapes "
                f"{lo.shape} and {hi.shape}"
            )
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise InvalidInputError("box bounds contain NaN")
        if not (lo <= hi).all():
            raise InvalidInputError("box has lower[i] > upper[i] for some i")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, u, atol: float = 0.0) -> bool:
        v = np.asarray(u, dtype=float)
        return bool((v >= self.lower - atol).all() and (v <= self.upper + atol).all())


def intersects_input_set(geometry: ExcitationGeometry, box: Box) -> bool:
    """Whether the nonexciting hyperplane passes through the input box.

    The affine function f(u) = a @ u + c attains its extremes over a box at
    the per-coordinate bound that matches the sign of a, so the exact range
    [f_min, f_max] comes from interval arithmetic.  The hyperplane meets the
    box exactly when 0 lies in that range; a slack of 1e-12 on both sides
    makes grazing contact count as intersection (the conservative answer:
    the controller then constrains when it might not strictly need to).
    """
    if not isinstance(geometry, ExcitationGeometry):
        raise InvalidInputError("intersects_input_set expects ExcitationGeometry")
    if geometry.status is not ExcitationStatus.HYPERPLANE:
        raise MisuseError(
            f"intersection test needs a hyperplane, got {geometry.status.value}"
        )
    if not isinstance(box, Box):
        box = Box(*box)
    if box.dim != geometry.a.size:
        raise InvalidInputError(
            f"box dimension {box.dim} does not match input dimension {geometry.a.size}"
        )
    # 0 * inf would be NaN, but a zero coefficient contributes nothing no
    # matter how wide the box is, so mask those coordinates out explicitly.
    with np.errstate(invalid="ignore"):
        at_lower = geometry.a * box.lower
        at_upper = geometry.a * box.upper
    zero = geometry.a == 0.0
    lo_terms = np.where(zero, 0.0, np.minimum(at_lower, at_upper))
    hi_terms = np.where(zero, 0.0, np.maximum(at_lower, at_upper))
    f_min = geometry.c + float(np.sum(lo_terms))
    f_max = geometry.c + float(np.sum(hi_terms))
    return f_min <= INTERSECT_SLACK and f_max >= -INTERSECT_SLACK


def pe_condition_metric(samples, order: int) -> float:
    """Condition number of the trailing square block of the Hankel matrix.

    Uses the last m*order columns of the depth-``order`` Hankel matrix of
    ``samples``; a smoothed proxy for how close the window is to losing
    excitation (larger is worse).
    """
    u = as_signal(samples)
    t, m = u.shape
    square = m * order
    h = build_hankel(u, order)
    if h.shape[1] < square:
        raise WindowTooShortError(
            f"need at least {order + square - 1} samples for the condition "
            f"metric at order {order}, got {t}"
        )
    return condition_number(h[:, -square:])
