"""Recursion execution and reproducible Monte Carlo ensembles.

One step of the recursion is

    X_{n+1} = X_n + (gamma_{n+1} * g + c_{n+1} * (eps + rem))

and that exact expression (grouping included) is the package-wide canonical
form: the stepper, the reconstruction checks, and the tests all evaluate it
identically, so stored trajectories reconstruct bitwise.

Reproducibility model
---------------------
Each run gets its own counter-based stream: ``Philox`` seeded by
``SeedSequence(master_seed, spawn_key=(run_index,))``.  A run consumes
``model.n_raw`` uniform doubles per step, drawn in blocks; counter-based
streams make the block boundaries irrelevant.  Models compute row-wise with
elementwise operations only, so a run's floating-point path is identical
whether executed alone, inside a batch, or on any worker split — ensembles
are bit-reproducible for every worker count.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import BlowUpError, InsufficientHorizonError, InsufficientRecordsError
from .models import Model
from .sequences import Schedule

__all__ = [
    "StepRecord",
    "Trajectory",
    "EnsembleSummary",
    "CaptureSpec",
    "step",
    "run",
    "monte_carlo",
    "empirical_increment_decomposition",
    "DecomposedIncrements",
    "combine_increment",
]

#: Steps per pre-drawn randomness block (counter-based streams make the
#: blocking invisible to results; this only bounds memory).
_RAW_BLOCK = 1024

#: Default abort threshold on ||X_n||_inf.
DEFAULT_BLOWUP_BOUND = 1e6


def combine_increment(gamma: float, g, c: float, eps, rem):
    """The canonical one-step increment ``gamma*g + c*(eps+rem)``.

    Every reconstruction in the package goes through this function so the
    floating-point grouping is always the same.
    """
    return gamma * g + c * (eps + rem)


@dataclass(frozen=True, eq=False)
class StepRecord:
    """One recorded step: state and the three increment pieces at index n."""

    n: int
    x: np.ndarray
    g: np.ndarray
    eps: np.ndarray
    rem: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A single run: every state, plus step pieces at a retention stride.

    ``states[n]`` is X_n for n = 0..N.  The pieces (g, eps, rem) are kept at
    step indices ``part_indices`` (every step when ``thinning == 1``).  At any
    retained step the canonical reconstruction holds bitwise:

        states[n+1] == states[n] + combine_increment(gamma_{n+1}, g, c_{n+1}, eps, rem)
    """

    model_id: str
    seed: object
    thinning: int
    schedule: Schedule
    states: np.ndarray
    part_indices: np.ndarray
    g: np.ndarray
    eps: np.ndarray
    rem: np.ndarray

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def record(self, n: int) -> StepRecord:
        """The full StepRecord at step n (must be retained)."""
        pos = np.searchsorted(self.part_indices, n)
        if pos >= len(self.part_indices) or self.part_indices[pos] != n:
            raise InsufficientRecordsError(
                f"step {n} not retained (thinning={self.thinning})"
            )
        return StepRecord(
            n=n, x=self.states[n], g=self.g[pos], eps=self.eps[pos], rem=self.rem[pos]
        )

    def iter_records(self) -> Iterable[StepRecord]:
        for pos, n in enumerate(self.part_indices):
            yield StepRecord(
                n=int(n),
                x=self.states[n],
                g=self.g[pos],
                eps=self.eps[pos],
                rem=self.rem[pos],
            )

    def reconstruction_residual(self) -> float:
        """Max abs deviation of the canonical reconstruction over retained
        steps; exactly 0.0 for trajectories produced by this engine."""
        ns = self.part_indices
        gam = self.schedule.gamma_values[ns + 1][:, None]
        c = self.schedule.c_values[ns + 1][:, None]
        rebuilt = self.states[ns] + combine_increment(gam, self.g, c, self.eps, self.rem)
        return float(np.max(np.abs(rebuilt - self.states[ns + 1]), initial=0.0))

    def to_csv(self, path) -> None:
        """Retained full records as CSV: n, x_*, g_*, eps_*, rem_*."""
        d = self.dim
        header = ",".join(
            ["n"]
            + [f"x_{i}" for i in range(d)]
            + [f"g_{i}" for i in range(d)]
            + [f"eps_{i}" for i in range(d)]
            + [f"rem_{i}" for i in range(d)]
        )
        ns = self.part_indices
        table = np.column_stack([ns.astype(np.float64), self.states[ns], self.g, self.eps, self.rem])
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class CaptureSpec:
    """What an ensemble keeps besides its summary statistics.

    state_indices:
        Times n at which every run's state is stored (for diagnostics).
    increment_indices:
        Step indices at which (g, eps, rem) are stored across runs (for
        hypothesis checks needing cross-run means at fixed n).
    """

    state_indices: tuple = ()
    increment_indices: tuple = ()

    @staticmethod
    def normalize(obj, N: int) -> "CaptureSpec":
        if obj is None:
            return CaptureSpec()
        if isinstance(obj, CaptureSpec):
            spec = obj
        else:
            spec = CaptureSpec(state_indices=tuple(obj))
        s = np.unique(np.asarray(spec.state_indices, dtype=np.int64)) if spec.state_indices else np.array([], np.int64)
        i = np.unique(np.asarray(spec.increment_indices, dtype=np.int64)) if spec.increment_indices else np.array([], np.int64)
        if len(s) and (s[0] < 0 or s[-1] > N):
            raise ValueError(f"state capture indices must lie in [0, {N}]")
        if len(i) and (i[0] < 0 or i[-1] > N - 1):
            raise ValueError(f"increment capture indices must lie in [0, {N - 1}]")
        return CaptureSpec(state_indices=tuple(s), increment_indices=tuple(i))


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Order-insensitive reduction of an ensemble (arrays indexed by run).

    ``sup_tail_distance[r]`` is run r's sup of ``||X_n - x*||`` over
    ``n in [tail_from, N]`` — the finite-horizon stand-in for "the run
    converges to the trap" (limits are unobservable at finite N).  Blown-up
    runs are flagged, frozen, and excluded from fractions/quantiles.
    """

    model_id: str
    n_runs: int
    N: int
    master_seed: int
    trap_point: np.ndarray
    tail_from: int
    terminal_states: np.ndarray
    sup_tail_distance: np.ndarray
    blown_up: np.ndarray  # bool per run
    capture_times: np.ndarray
    captured_states: Optional[np.ndarray]  # (n_runs, len(capture_times), d)
    increment_indices: np.ndarray
    captured_g: Optional[np.ndarray]  # (n_runs, len(increment_indices), d)
    captured_eps: Optional[np.ndarray]
    captured_rem: Optional[np.ndarray]

    @property
    def ok(self) -> np.ndarray:
        return ~self.blown_up

    @property
    def blowup_count(self) -> int:
        return int(self.blown_up.sum())

    def terminal_distances(self) -> np.ndarray:
        return np.linalg.norm(self.terminal_states - self.trap_point, axis=1)

    def near_trap_fraction(self, radius: float, t: Optional[int] = None) -> float:
        """Fraction of (non-blown) runs within ``radius`` of the trap.

        ``t=None`` uses the tail-sup statistic (strictest); an integer ``t``
        must be a captured time or N.
        """
        ok = self.ok
        denom = int(ok.sum())
        if denom == 0:
            return 0.0
        if t is None:
            near = self.sup_tail_distance[ok] < radius
        elif t == self.N:
            near = self.terminal_distances()[ok] < radius
        else:
            pos = np.searchsorted(self.capture_times, t)
            if pos >= len(self.capture_times) or self.capture_times[pos] != t:
                raise InsufficientRecordsError(f"time {t} was not captured")
            d = np.linalg.norm(self.captured_states[:, pos, :] - self.trap_point, axis=-1)
            near = d[ok] < radius
        return float(near.sum()) / denom

    def distance_quantiles(self, levels=(0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)) -> dict:
        dist = self.terminal_distances()[self.ok]
        if len(dist) == 0:
            return {f"{q:g}": float("nan") for q in levels}
        return {f"{q:g}": float(np.quantile(dist, q)) for q in levels}

    def to_dict(self, near_trap_radius: float = 1e-2) -> dict:
        return {
            "model_id": self.model_id,
            "n_runs": int(self.n_runs),
            "N": int(self.N),
            "master_seed": int(self.master_seed),
            "trap_point": [float(v) for v in self.trap_point],
            "tail_from": int(self.tail_from),
            "near_trap_radius": float(near_trap_radius),
            "near_trap_fraction": self.near_trap_fraction(near_trap_radius),
            "terminal_distance_quantiles": self.distance_quantiles(),
            "blowup_count": self.blowup_count,
            "blowup_runs": [int(i) for i in np.nonzero(self.blown_up)[0]],
            "terminal_states": [[float(v) for v in row] for row in self.terminal_states],
        }


# ---------------------------------------------------------------------------
# core lockstep driver
# ---------------------------------------------------------------------------


def _seed_for_run(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(run_index),))


def _generators(master_seed: int, run_indices: Sequence[int]):
    return [
        np.random.Generator(np.random.Philox(_seed_for_run(master_seed, i)))
        for i in run_indices
    ]


def _draw_block(gens, length: int, n_raw: int) -> np.ndarray:
    """Per-run uniform blocks, shape (B, length, n_raw)."""
    if n_raw == 0:
        return np.zeros((len(gens), length, 0))
    return np.stack([g.random((length, n_raw)) for g in gens])


def _drive(
    model: Model,
    schedule: Schedule,
    x0: np.ndarray,
    N: int,
    gens,
    *,
    tail_from: int,
    trap_point: np.ndarray,
    capture: CaptureSpec,
    blowup_bound: float,
    store_states: bool = False,
    store_parts_stride: int = 0,
    raise_on_blowup: bool = False,
):
    """Advance a batch of runs in lockstep; the single workhorse behind both
    ``run`` and ``monte_carlo`` (so a lone run and an ensemble row share every
    floating-point operation).
    """
    if N > schedule.horizon:
        raise InsufficientHorizonError(f"N={N} exceeds schedule horizon {schedule.horizon}")
    schedule.prime()
    B = len(gens)
    d = model.dim
    x = np.broadcast_to(np.asarray(x0, dtype=np.float64), (B, d)).copy()
    aux = model.init_aux(B)
    gam, cs = schedule.gamma_values, schedule.c_values

    state_idx = np.asarray(capture.state_indices, dtype=np.int64)
    inc_idx = np.asarray(capture.increment_indices, dtype=np.int64)
    cap_states = np.empty((B, len(state_idx), d)) if len(state_idx) else None
    cap_g = np.empty((B, len(inc_idx), d)) if len(inc_idx) else None
    cap_eps = np.empty_like(cap_g) if cap_g is not None else None
    cap_rem = np.empty_like(cap_g) if cap_g is not None else None
    state_pos = {int(t): k for k, t in enumerate(state_idx)}
    inc_pos = {int(t): k for k, t in enumerate(inc_idx)}

    states = np.empty((N + 1, B, d)) if store_states else None
    if store_states:
        states[0] = x
    if store_parts_stride:
        part_ns = np.arange(0, N, store_parts_stride, dtype=np.int64)
        parts_pos = {int(t): k for k, t in enumerate(part_ns)}
        parts_g = np.empty((len(part_ns), B, d))
        parts_eps = np.empty_like(parts_g)
        parts_rem = np.empty_like(parts_g)
    else:
        part_ns = np.array([], dtype=np.int64)

    sup_tail = np.zeros(B)
    blown = np.zeros(B, dtype=bool)
    if 0 in state_pos:
        cap_states[:, state_pos[0]] = x

    n = 0
    while n < N:
        block = min(_RAW_BLOCK, N - n)
        raws = _draw_block(gens, block, model.n_raw)
        for j in range(block):
            g, eps, rem, aux = model.step_parts(x, n, raws[:, j], aux)
            x = x + combine_increment(gam[n + 1], g, cs[n + 1], eps, rem)
            if store_states:
                states[n + 1] = x

            bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > blowup_bound)
            if bad.any():
                new = bad & ~blown
                if new.any():
                    if raise_on_blowup:
                        r = int(np.nonzero(new)[0][0])
                        err = BlowUpError(
                            f"state left the admissible region at step {n + 1}",
                            step=n + 1,
                            state=x[r].copy(),
                        )
                        if store_states:
                            err.prefix = states[: n + 2, r, :].copy()
                        raise err
                    blown |= new
                x[blown] = trap_point  # park blown rows somewhere benign

            if n in inc_pos:
                k = inc_pos[n]
                cap_g[:, k], cap_eps[:, k], cap_rem[:, k] = g, eps, rem
            if store_parts_stride and n in parts_pos:
                k = parts_pos[n]
                parts_g[k], parts_eps[k], parts_rem[k] = g, eps, rem
            if (n + 1) in state_pos:
                cap_states[:, state_pos[n + 1]] = x
            if n + 1 >= tail_from:
                dist = np.linalg.norm(x - trap_point, axis=1)
                np.maximum(sup_tail, dist, out=sup_tail)
            n += 1

    out = {
        "x": x,
        "sup_tail": sup_tail,
        "blown": blown,
        "cap_states": cap_states,
        "cap_g": cap_g,
        "cap_eps": cap_eps,
        "cap_rem": cap_rem,
    }
    if store_states:
        out["states"] = states
    if store_parts_stride:
        out["part_ns"] = part_ns
        out["parts"] = (parts_g, parts_eps, parts_rem)
    return out


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def step(x, n: int, model: Model, schedule: Schedule, rng, aux=None):
    """One step of the recursion at state x and step index n (0-based).

    Returns ``(record, next_state)``; pass ``aux`` through between calls for
    models with internal walk state (created via ``model.init_aux(1)``).
    """
    if n + 1 > schedule.horizon:
        raise InsufficientHorizonError(f"step {n + 1} beyond horizon {schedule.horizon}")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if aux is None:
        aux = model.init_aux(1)
    raw = rng.random((1, model.n_raw)) if model.n_raw else np.zeros((1, 0))
    g, eps, rem, aux = model.step_parts(x, n, raw, aux)
    gamma, c = schedule.gamma_values[n + 1], schedule.c_values[n + 1]
    nxt = (x + combine_increment(gamma, g, c, eps, rem))[0]
    if not np.all(np.isfinite(nxt)):
        raise BlowUpError(f"non-finite state at step {n + 1}", step=n + 1, state=nxt)
    record = StepRecord(n=n, x=x[0], g=g[0], eps=eps[0], rem=rem[0])
    return record, nxt


def run(
    model: Model,
    schedule: Schedule,
    x0,
    N: int,
    seed,
    thinning: Optional[int] = None,
    blowup_bound: float = DEFAULT_BLOWUP_BOUND,
) -> Trajectory:
    """Execute one trajectory; deterministic in (model, schedule, x0, N, seed).

    ``seed`` is an integer master seed (the run is then identical to run 0 of
    ``monte_carlo`` with that master seed) or a ``numpy.random.SeedSequence``.
    States are stored at every step; full pieces every ``thinning`` steps
    (default 1 up to N=10^5, else 16).
    """
    if thinning is None:
        thinning = 1 if N <= 100_000 else 16
    if isinstance(seed, np.random.SeedSequence):
        ss, seed_label = seed, seed
    else:
        ss = _seed_for_run(int(seed), 0)
        seed_label = int(seed)
    gens = [np.random.Generator(np.random.Philox(ss))]
    trap = model.trap.x_star if model.trap is not None else np.zeros(model.dim)
    res = _drive(
        model,
        schedule,
        x0,
        N,
        gens,
        tail_from=N + 1,
        trap_point=np.asarray(trap, dtype=np.float64),
        capture=CaptureSpec(),
        blowup_bound=blowup_bound,
        store_states=True,
        store_parts_stride=thinning,
        raise_on_blowup=True,
    )
    parts_g, parts_eps, parts_rem = res["parts"]
    return Trajectory(
        model_id=model.id,
        seed=seed_label,
        thinning=int(thinning),
        schedule=schedule,
        states=res["states"][:, 0, :],
        part_indices=res["part_ns"],
        g=parts_g[:, 0, :],
        eps=parts_eps[:, 0, :],
        rem=parts_rem[:, 0, :],
    )


def _chunk_worker(
    model,
    schedule,
    x0,
    N,
    master_seed,
    run_indices,
    tail_from,
    trap_point,
    capture,
    blowup_bound,
):
    gens = _generators(master_seed, run_indices)
    res = _drive(
        model,
        schedule,
        np.asarray(x0, dtype=np.float64),
        N,
        gens,
        tail_from=tail_from,
        trap_point=trap_point,
        capture=capture,
        blowup_bound=blowup_bound,
    )
    res = {k: v for k, v in res.items()}
    res["run_indices"] = np.asarray(run_indices, dtype=np.int64)
    return res


def monte_carlo(
    model: Model,
    schedule: Schedule,
    x0,
    N: int,
    n_runs: int,
    master_seed: int,
    workers: int = 1,
    captures=None,
    tail_fraction: float = 0.25,
    blowup_bound: float = DEFAULT_BLOWUP_BOUND,
) -> EnsembleSummary:
    """Independent ensemble of ``n_runs`` trajectories.

    Per-run streams are derived from ``(master_seed, run_index)`` alone, and
    all model arithmetic is row-independent, so the summary is bit-identical
    for every ``workers`` value and chunking.  ``tail_fraction`` sets the
    tail window for the sup-distance statistic (last quarter by default).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    capture = CaptureSpec.normalize(captures, N)
    trap = model.trap.x_star if model.trap is not None else np.zeros(model.dim)
    trap = np.asarray(trap, dtype=np.float64)
    tail_from = max(0, N - int(np.ceil(tail_fraction * N)))
    x0 = np.asarray(x0, dtype=np.float64)

    all_indices = np.arange(n_runs)
    if workers == 1:
        chunks = [all_indices]
    else:
        n_chunks = min(workers * 4, n_runs)  # a few chunks per worker
        chunks = [c for c in np.array_split(all_indices, n_chunks) if len(c)]

    args = [
        (model, schedule, x0, N, master_seed, chunk, tail_from, trap, capture, blowup_bound)
        for chunk in chunks
    ]
    if workers == 1:
        results = [_chunk_worker(*a) for a in args]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_chunk_worker, *a) for a in args]
            results = [f.result() for f in futures]

    # merge sorted by run index so reduction order never depends on scheduling
    results.sort(key=lambda r: int(r["run_indices"][0]))
    order = np.argsort(np.concatenate([r["run_indices"] for r in results]))

    def _merge(key):
        vals = [r[key] for r in results]
        if vals[0] is None:
            return None
        return np.concatenate(vals, axis=0)[order]

    return EnsembleSummary(
        model_id=model.id,
        n_runs=n_runs,
        N=N,
        master_seed=int(master_seed),
        trap_point=trap,
        tail_from=tail_from,
        terminal_states=_merge("x"),
        sup_tail_distance=_merge("sup_tail"),
        blown_up=_merge("blown"),
        capture_times=np.asarray(capture.state_indices, dtype=np.int64),
        captured_states=_merge("cap_states"),
        increment_indices=np.asarray(capture.increment_indices, dtype=np.int64),
        captured_g=_merge("cap_g"),
        captured_eps=_merge("cap_eps"),
        captured_rem=_merge("cap_rem"),
    )


# ---------------------------------------------------------------------------
# increment decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecomposedIncrements:
    """Per-step pieces over a range: drift ``gamma*g``, martingale ``c*eps``,
    remainder ``c*rem``, the canonical combined increment, and the running
    martingale sum ``M[i] = sum of c*eps over the first i steps of the range``.
    """

    ns: np.ndarray
    drift: np.ndarray
    martingale: np.ndarray
    remainder: np.ndarray
    combined: np.ndarray
    martingale_cumsum: np.ndarray


def empirical_increment_decomposition(
    traj: Trajectory, window: Optional[tuple] = None
) -> DecomposedIncrements:
    """Split each retained increment into its three scaled parts.

    Requires full retention (``thinning == 1``) over the queried window.  The
    ``combined`` array reconstructs the trajectory bitwise:
    ``states[n+1] == states[n] + combined[i]`` for every row.
    """
    lo, hi = (0, traj.N) if window is None else (int(window[0]), int(window[1]))
    if not (0 <= lo < hi <= traj.N):
        raise ValueError(f"window must satisfy 0 <= lo < hi <= N, got {(lo, hi)}")
    if traj.thinning != 1:
        raise InsufficientRecordsError(
            f"decomposition needs thinning=1, trajectory has {traj.thinning}"
        )
    ns = np.arange(lo, hi, dtype=np.int64)
    g, eps, rem = traj.g[lo:hi], traj.eps[lo:hi], traj.rem[lo:hi]
    gam = traj.schedule.gamma_values[ns + 1][:, None]
    c = traj.schedule.c_values[ns + 1][:, None]
    mart = c * eps
    M = np.concatenate([np.zeros((1, traj.dim)), np.cumsum(mart, axis=0)])
    return DecomposedIncrements(
        ns=ns,
        drift=gam * g,
        martingale=mart,
        remainder=c * rem,
        combined=combine_increment(gam, g, c, eps, rem),
        martingale_cumsum=M,
    )
