"""Deterministic flow integration and dynamical diagnostics.

The recursion's natural clock is the drift timescale ``m(t) = sum gamma_k``;
re-indexing a trajectory by it gives the time-changed path ``X^m_s``.  Two
diagnostics measure how that path relates to the flow of the drift field:

* shadow deficit: ``sup_(0<=h<=T) ||X^m_(t+h) - phi_h(X^m_t)||``, restarted
  from exact trajectory states, whose log should fall linearly in t at the
  noise-decay rate;
* manifold attraction: distance of ``X^m_t`` to the locally invariant set K,
  whose log should fall at the contraction-vs-noise rate.

Both restart/compare only at exact retained states (never at interpolated
points: interpolating an exponentially growing path injects error that grows
like the path itself and swamps the decaying signal).

The default deficit normalization is scale-relative, dividing by
``1 + ||X^m_t||``: on escaping trajectories the absolute one-step flow error
grows with the state and plateaus, while the relative deficit keeps decaying
at the noise rate; absolute mode remains available for bounded paths and
perturbation witnesses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import EnsembleSummary, Trajectory
from .errors import DegenerateTimeChangeError, DomainExitError
from .models import ManifoldK
from .sequences import Schedule
from .spectral import TrapSplit, project_pm

__all__ = [
    "TimeChangedPath",
    "integrate_flow",
    "flow_path",
    "time_change",
    "AptResult",
    "apt_deficit",
    "ManifoldRateResult",
    "manifold_rate",
    "EnsembleRates",
    "ensemble_apt_deficit",
    "ensemble_manifold_rate",
]

_DISTANCE_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class TimeChangedPath:
    """A trajectory re-indexed by the drift timescale.

    ``states[k]`` is the exact process state at clock value ``s_grid[k]``;
    between grid points the path is understood piecewise-linearly, but all
    diagnostics sample at grid points only.
    """

    s_grid: np.ndarray
    states: np.ndarray
    indices: Optional[np.ndarray] = None  # original step indices, if known

    def __post_init__(self):
        if len(self.s_grid) != len(self.states):
            raise ValueError("s_grid and states must have equal length")
        if len(self.s_grid) >= 2 and not np.all(np.diff(self.s_grid) > 0):
            raise DegenerateTimeChangeError("s_grid must be strictly increasing")

    @property
    def duration(self) -> float:
        return float(self.s_grid[-1] - self.s_grid[0])

    def state_at(self, s: float) -> np.ndarray:
        """State at clock s: exact at grid points, linear in between."""
        grid = self.s_grid
        if s < grid[0] or s > grid[-1]:
            raise ValueError(f"s={s} outside the path range [{grid[0]}, {grid[-1]}]")
        j = int(np.searchsorted(grid, s))
        if j < len(grid) and grid[j] == s:
            return self.states[j].copy()
        lo, hi = j - 1, j
        w = (s - grid[lo]) / (grid[hi] - grid[lo])
        return (1.0 - w) * self.states[lo] + w * self.states[hi]


# ---------------------------------------------------------------------------
# flow integration
# ---------------------------------------------------------------------------


def _eval_field(f: Callable, x: np.ndarray, t_now: float) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            v = np.asarray(f(x), dtype=np.float64)
    except ArithmeticError as exc:
        raise DomainExitError(
            f"field evaluation failed at flow time {t_now:g}: {exc}", exit_time=t_now
        ) from exc
    if v.shape != x.shape:
        raise ValueError(f"field returned shape {v.shape} for input {x.shape}")
    return v


def _rk4_segment(f: Callable, x: np.ndarray, t0: float, dt: float, h: float) -> np.ndarray:
    """Advance states (..., d) by duration dt with classical 4th-order steps."""
    if dt == 0.0:
        return x
    n = max(1, int(np.ceil(dt / h - 1e-12)))
    hh = dt / n
    t = t0
    for _ in range(n):
        k1 = _eval_field(f, x, t)
        k2 = _eval_field(f, x + (0.5 * hh) * k1, t)
        k3 = _eval_field(f, x + (0.5 * hh) * k2, t)
        k4 = _eval_field(f, x + hh * k3, t)
        x = x + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += hh
    return x


def integrate_flow(f: Callable, x0, h: float, T: float) -> np.ndarray:
    """``phi_T(x0)`` by fixed-step 4th-order integration (error O(h^4)).

    ``x0`` may be a single point (d,) or a batch (..., d); the field must
    accept the same shape.  Raises :class:`DomainExitError` (carrying the exit
    time) if the field fails or the state leaves the finite range.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if T < 0:
        raise ValueError("duration T must be nonnegative")
    x = np.array(x0, dtype=np.float64)
    out = _rk4_segment(f, x, 0.0, float(T), h)
    if not np.all(np.isfinite(out)):
        raise DomainExitError(
            f"flow left the finite range within duration {T:g}", exit_time=float(T)
        )
    return out


def flow_path(f: Callable, x0, s_grid, h: float = 1e-3) -> TimeChangedPath:
    """Integrate the flow and record it on a clock grid (a noiseless path)."""
    s = np.asarray(s_grid, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    states = np.empty((len(s),) + x.shape)
    states[0] = x
    for k in range(1, len(s)):
        x = _rk4_segment(f, x, float(s[k - 1]), float(s[k] - s[k - 1]), h)
        states[k] = x
    return TimeChangedPath(s_grid=s, states=states)


def time_change(
    traj: Trajectory, schedule: Optional[Schedule] = None, indices=None
) -> TimeChangedPath:
    """Re-index a trajectory by the drift timescale.

    The grid is the exact prefix-sum value at each retained step (all steps
    by default), so every grid state is an exact process state.  Requires the
    drift steps to be strictly positive on the range (a vanishing prefix has
    no inverse clock).
    """
    sched = schedule if schedule is not None else traj.schedule
    if indices is None:
        indices = np.arange(traj.N + 1)
    else:
        indices = np.unique(np.asarray(indices, dtype=np.int64))
        if indices[0] < 0 or indices[-1] > traj.N:
            raise ValueError("indices out of trajectory range")
    m = np.asarray(sched.partial_drift_sum(indices.astype(np.float64)))
    if np.any(np.diff(m) <= 0):
        raise DegenerateTimeChangeError(
            "drift timescale is not strictly increasing on the range "
            "(gamma vanishes somewhere, e.g. on a prefix)"
        )
    return TimeChangedPath(s_grid=m, states=traj.states[indices], indices=indices)


# ---------------------------------------------------------------------------
# shadow deficit
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AptResult:
    """Per-restart shadow deficits and the fitted tail decay rate."""

    t_values: np.ndarray
    deficits: np.ndarray
    rate: float
    n_fit: int
    n_excluded: int
    normalization: str
    T: float

    def to_csv(self, path) -> None:
        table = np.column_stack([self.t_values, self.deficits])
        np.savetxt(
            path, table, delimiter=",", header="t,deficit", comments="", fmt="%.17g"
        )


def _restart_positions(s: np.ndarray, T: float, t_grid, n_restarts: int) -> np.ndarray:
    """Grid positions to restart from; every window [t, t+T] must fit."""
    limit = s[-1] - T
    if t_grid is not None:
        ts = np.asarray(t_grid, dtype=np.float64)
        if np.any(ts + T > s[-1] + 1e-12) or np.any(ts < s[0]):
            raise ValueError("every t in t_grid must satisfy s0 <= t and t+T <= s_end")
        pos = np.searchsorted(s, ts, side="right") - 1  # snap to grid point <= t
    else:
        last = int(np.searchsorted(s, limit, side="right") - 1)
        if last < 1:
            raise ValueError("window T leaves no admissible restart point")
        pos = np.geomspace(1, last, min(n_restarts, last)).astype(np.int64)
    pos = np.unique(np.clip(pos, 0, len(s) - 1))
    return pos[s[pos] + T <= s[-1] + 1e-12]


def _batch_deficits(
    s: np.ndarray,
    X: np.ndarray,  # (B, K, d)
    f: Callable,
    T: float,
    pos: np.ndarray,
    h: float,
    normalization: str,
):
    B = X.shape[0]
    deficits = np.full((B, len(pos)), np.inf)
    hard_excluded = np.zeros(len(pos), dtype=bool)
    for r, i in enumerate(pos):
        cur = X[:, i, :].copy()
        if normalization == "scale":
            denom = 1.0 + np.linalg.norm(X[:, i, :], axis=1)
        else:
            denom = np.ones(B)
        best = np.zeros(B)
        compared = False
        j = i + 1
        try:
            while j < len(s) and s[j] <= s[i] + T + 1e-12:
                cur = _rk4_segment(f, cur, float(s[j - 1] - s[i]), float(s[j] - s[j - 1]), h)
                diff = np.linalg.norm(X[:, j, :] - cur, axis=1) / denom
                diff = np.where(np.isfinite(diff), diff, np.inf)
                best = np.maximum(best, diff)
                compared = True
                j += 1
        except DomainExitError:
            hard_excluded[r] = True
            continue
        if compared:
            deficits[:, r] = best
        else:
            hard_excluded[r] = True
    return deficits, hard_excluded


def _tail_slopes(ts: np.ndarray, ys: np.ndarray, tail_fraction: float = 1.0 / 3.0):
    """Least-squares slope of log(ys) vs ts over the tail third, per row.

    Rows with any non-finite log value in the tail get slope NaN.
    Returns (slopes, n_fit).
    """
    R = len(ts)
    if R < 2:
        return np.full(ys.shape[0], np.nan), 0
    k = min(R, max(2, int(np.ceil(R * tail_fraction))))
    sel = slice(R - k, R)
    t = ts[sel]
    with np.errstate(divide="ignore"):
        L = np.log(np.maximum(ys[:, sel], _DISTANCE_FLOOR))
    tc = t - t.mean()
    denom = float(np.sum(tc**2))
    good = np.all(np.isfinite(L), axis=1)
    slopes = np.full(ys.shape[0], np.nan)
    if denom > 0 and good.any():
        Lg = L[good]
        slopes[good] = (Lg - Lg.mean(axis=1, keepdims=True)) @ tc / denom
    return slopes, k


def apt_deficit(
    path: TimeChangedPath,
    f: Callable,
    T: float,
    t_grid=None,
    h: float = 5e-3,
    normalization: str = "scale",
    n_restarts: int = 48,
    tail_fraction: float = 1.0 / 3.0,
) -> AptResult:
    """Shadowing deficit of a time-changed path against its flow.

    For each restart time t (grid states only), integrates the flow from
    ``X^m_t`` and takes the sup of the deviation at all grid points within
    ``[t, t+T]``; reports deficits and the least-squares slope of their logs
    over the tail third of the restart grid.  Restarts whose flow leaves the
    field's domain are recorded as +inf and excluded from the fit.
    """
    if normalization not in ("scale", "absolute"):
        raise ValueError(f"unknown normalization {normalization!r}")
    s = path.s_grid
    X = path.states[None, :, :]
    pos = _restart_positions(s, T, t_grid, n_restarts)
    deficits, hard = _batch_deficits(s, X, f, T, pos, h, normalization)
    row = deficits[0]
    keep = np.isfinite(row)
    slopes, n_fit = _tail_slopes(s[pos[keep]], row[None, keep], tail_fraction)
    return AptResult(
        t_values=s[pos],
        deficits=row,
        rate=float(slopes[0]),
        n_fit=n_fit,
        n_excluded=int((~keep).sum()),
        normalization=normalization,
        T=float(T),
    )


# ---------------------------------------------------------------------------
# manifold attraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifoldRateResult:
    """Distances to the invariant set along the clock and the tail slope."""

    t_values: np.ndarray
    distances: np.ndarray
    slope: float
    n_fit: int
    clamped: bool

    def to_csv(self, path) -> None:
        with np.errstate(divide="ignore"):
            logs = np.log(np.maximum(self.distances, _DISTANCE_FLOOR))
        table = np.column_stack([self.t_values, self.distances, logs])
        np.savetxt(
            path,
            table,
            delimiter=",",
            header="t,distance,log_distance",
            comments="",
            fmt="%.17g",
        )


def _distances_to_K(
    states: np.ndarray,
    K: Optional[ManifoldK],
    split: Optional[TrapSplit],
    x_star,
) -> np.ndarray:
    """Distance in the declared coordinates: the non-repulsive block norm when
    a split is given (exact for affine invariant sets in split coordinates),
    else the ambient orthogonal-complement distance to K."""
    if split is not None:
        if x_star is None:
            raise ValueError("x_star is required with a split")
        _, y_minus = project_pm(split, states, np.asarray(x_star, dtype=np.float64))
        return np.linalg.norm(y_minus, axis=-1)
    if K is None:
        raise ValueError("need either K or a split")
    return K.distance(states)


def manifold_rate(
    path: TimeChangedPath,
    K: Optional[ManifoldK] = None,
    split: Optional[TrapSplit] = None,
    x_star=None,
    tail_fraction: float = 1.0 / 3.0,
) -> ManifoldRateResult:
    """Tail slope of ``log d(X^m_t, K)`` along the clock.

    A path identically on K reports slope -inf; distances below the floating
    floor are clamped (flagged) and count as attained decay.
    """
    dist = _distances_to_K(path.states, K, split, x_star)
    if np.all(dist == 0.0):
        return ManifoldRateResult(
            t_values=path.s_grid,
            distances=dist,
            slope=float("-inf"),
            n_fit=0,
            clamped=False,
        )
    clamped = bool(np.any(dist < _DISTANCE_FLOOR))
    slopes, n_fit = _tail_slopes(path.s_grid, dist[None, :], tail_fraction)
    return ManifoldRateResult(
        t_values=path.s_grid,
        distances=dist,
        slope=float(slopes[0]),
        n_fit=n_fit,
        clamped=clamped,
    )


# ---------------------------------------------------------------------------
# ensemble variants (vectorized across runs)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleRates:
    """Per-run diagnostic rates and their median (NaN rates excluded)."""

    rates: np.ndarray
    t_values: np.ndarray
    n_excluded: int

    @property
    def median(self) -> float:
        good = self.rates[np.isfinite(self.rates)]
        return float(np.median(good)) if len(good) else float("nan")


def _ensemble_paths(summary: EnsembleSummary, schedule: Schedule):
    if summary.captured_states is None or not len(summary.capture_times):
        raise ValueError("ensemble has no captured states for diagnostics")
    s = np.asarray(schedule.partial_drift_sum(summary.capture_times.astype(np.float64)))
    if np.any(np.diff(s) <= 0):
        raise DegenerateTimeChangeError("capture times give a flat clock segment")
    return s, summary.captured_states[summary.ok]


def ensemble_apt_deficit(
    summary: EnsembleSummary,
    schedule: Schedule,
    f: Callable,
    T: float,
    h: float = 5e-3,
    normalization: str = "scale",
    n_restarts: int = 48,
    tail_fraction: float = 1.0 / 3.0,
) -> EnsembleRates:
    """Per-run shadow-deficit tail rates over the captured state grid."""
    s, X = _ensemble_paths(summary, schedule)
    pos = _restart_positions(s, T, None, n_restarts)
    deficits, hard = _batch_deficits(s, X, f, T, pos, h, normalization)
    keep = ~hard
    slopes, _ = _tail_slopes(s[pos[keep]], deficits[:, keep], tail_fraction)
    return EnsembleRates(
        rates=slopes, t_values=s[pos], n_excluded=int(hard.sum())
    )


def ensemble_manifold_rate(
    summary: EnsembleSummary,
    schedule: Schedule,
    K: Optional[ManifoldK] = None,
    split: Optional[TrapSplit] = None,
    x_star=None,
    tail_fraction: float = 1.0 / 3.0,
) -> EnsembleRates:
    """Per-run manifold-attraction tail slopes over the captured state grid."""
    s, X = _ensemble_paths(summary, schedule)
    dist = _distances_to_K(X, K, split, x_star)
    slopes, _ = _tail_slopes(s, dist, tail_fraction)
    return EnsembleRates(rates=slopes, t_values=s, n_excluded=0)
