"""Command-line interface and experiment orchestration.

Subcommands
-----------
``simulate``  run the ensemble and write ``summary.json`` (no checks)
``check``     full pipeline: simulate -> hypothesis checks -> diagnostics -> report
``spectral``  classify a matrix (block split, mu, coercivity constant)
``report``    render an existing ``summary.json`` as text

Exit codes: 0 all requested checks pass or are inconclusive, 2 some check
failed (or the spectral classification cannot certify instability), 1 runtime
or configuration error.

Everything that can vary between identical reruns (timestamps, worker count)
lives under the ``meta`` key of ``summary.json``; the rest of the file is
byte-stable for a fixed config and seed, for any worker count.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import engine, flow, hypotheses, models, sequences, spectral
from .errors import AmbiguousSpectrumError, ConfigError, TrapcheckError

__all__ = [
    "ExperimentConfig",
    "run_experiment",
    "canonical_json",
    "config_hash",
    "main",
]

SCHEMA_VERSION = 1

_CHECK_NAMES = (
    "noise_excitation",
    "remainder",
    "drift_sign",
    "rate_condition",
    "jump_moments",
    "tail_noise",
)
_DIAGNOSTIC_NAMES = ("apt", "manifold_rate")

#: Hard cap on contiguous increment-capture windows (memory guard).
_MAX_CONTIGUOUS_WINDOW = 20_000


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------


def _jsonable(obj):
    """Plain JSON types only; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)  # 'inf', '-inf', 'nan'
    return obj


def canonical_json(obj) -> str:
    """Deterministic rendering: sorted keys, shortest round-trip floats."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(cfg: dict) -> str:
    compact = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(compact.encode()).hexdigest()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (see README for the schema)."""

    model: dict
    schedule: dict
    N: int
    n_runs: int
    master_seed: int
    x0: Optional[list] = None
    checks: tuple = ()
    diagnostics: tuple = ()
    theorem: Optional[str] = None
    rate_window: Optional[tuple] = None
    near_trap_radius: float = 1e-2
    max_blowup_fraction: float = 0.5
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(cfg: dict) -> "ExperimentConfig":
        for key in ("model", "schedule", "N", "n_runs"):
            if key not in cfg:
                raise ConfigError("missing required field", key)
        if "master_seed" not in cfg:
            raise ConfigError(
                "missing required field (wall-clock seeding is not allowed)",
                "master_seed",
            )
        N = int(cfg["N"])
        checks = tuple(cfg.get("checks", ()))
        for i, c in enumerate(checks):
            name = c.get("name")
            if name not in _CHECK_NAMES:
                raise ConfigError(f"unknown check {name!r}", f"checks[{i}].name")
            w = c.get("window")
            if w is not None and not (0 <= int(w[0]) < int(w[1]) <= N):
                raise ConfigError(
                    f"window {w} not within [0, {N}]", f"checks[{i}].window"
                )
        diags = tuple(cfg.get("diagnostics", ()))
        for i, dg in enumerate(diags):
            if dg.get("name") not in _DIAGNOSTIC_NAMES:
                raise ConfigError(
                    f"unknown diagnostic {dg.get('name')!r}", f"diagnostics[{i}].name"
                )
        theorem = cfg.get("theorem")
        if theorem is not None and theorem not in hypotheses.THEOREM_IDS:
            raise ConfigError(f"unknown theorem id {theorem!r}", "theorem")
        rw = cfg.get("rate_window")
        if rw is not None:
            rw = (int(rw[0]), int(rw[1]))
            if not (1 <= rw[0] < rw[1] <= N):
                raise ConfigError(f"rate_window {rw} not within [1, {N}]", "rate_window")
        return ExperimentConfig(
            model=dict(cfg["model"]),
            schedule=dict(cfg["schedule"]),
            N=N,
            n_runs=int(cfg["n_runs"]),
            master_seed=int(cfg["master_seed"]),
            x0=cfg.get("x0"),
            checks=checks,
            diagnostics=diags,
            theorem=theorem,
            rate_window=rw,
            near_trap_radius=float(cfg.get("near_trap_radius", 1e-2)),
            max_blowup_fraction=float(cfg.get("max_blowup_fraction", 0.5)),
            output=dict(cfg.get("output", {})),
            raw=dict(cfg),
        )

    @staticmethod
    def load(path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path))
        except OSError as exc:
            raise ConfigError(str(exc), str(path))
        return ExperimentConfig.from_dict(cfg)


def _build_model(spec: dict) -> models.Model:
    kind = spec.get("kind")
    try:
        if kind == "linear":
            return models.LinearModel(
                spec.get("H", [[1.0]]),
                noise_kind=spec.get("noise", "rademacher"),
                remainder_kind=spec.get("remainder", "none"),
                unstable_dims=int(spec.get("unstable_dims", 1)),
                id=spec.get("id"),
            )
        if kind == "synthetic":
            return models.SyntheticModel(
                mu=float(spec.get("mu", -1.0)),
                nu=float(spec.get("nu", 1.0)),
                dim=int(spec.get("dim", 2)),
                delta_plus=int(spec.get("delta_plus", 1)),
            )
        if kind in ("vrrw_walk", "vrrw_meanfield"):
            d = int(spec["d"])
            alpha = float(spec["alpha"])
            counts = spec.get("initial_counts")
            if spec.get("graph", "complete") == "complete":
                cfg = models.VrrwConfig.complete(d, alpha, counts)
            else:
                cfg = models.VrrwConfig(
                    d=d,
                    alpha=alpha,
                    A=np.asarray(spec["A"], dtype=np.float64),
                    initial_counts=tuple(counts or (1,) * d),
                )
            if kind == "vrrw_walk":
                return models.VrrwWalkModel(cfg, start_vertex=int(spec.get("start_vertex", 0)))
            return models.MeanFieldVrrwModel(cfg)
        if kind == "control":
            which = spec.get("which")
            table = models.control_models()
            if which not in table:
                raise ConfigError(
                    f"unknown control {which!r}; options: {sorted(table)}", "model.which"
                )
            return table[which]
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "model") from exc
    raise ConfigError(f"unknown model kind {kind!r}", "model.kind")


def _build_schedule(spec: dict, model: models.Model, N: int) -> sequences.Schedule:
    spec = dict(spec)
    spec.setdefault("horizon", N)
    if int(spec["horizon"]) < N:
        raise ConfigError(f"horizon {spec['horizon']} < N={N}", "schedule.horizon")
    if spec.get("kind") == "natural":
        if not hasattr(model, "natural_schedule"):
            raise ConfigError(
                f"model {model.id} has no natural schedule", "schedule.kind"
            )
        return model.natural_schedule(int(spec["horizon"]))
    return sequences.Schedule.from_config(spec)


# ---------------------------------------------------------------------------
# capture planning
# ---------------------------------------------------------------------------


def _diag_state_grid(N: int, n_points: int = 1024) -> np.ndarray:
    return np.unique(np.geomspace(1, N, min(n_points, N)).astype(np.int64))


def _capture_plan(config: ExperimentConfig):
    """Derive which states/increments the ensemble must retain."""
    N = config.N
    state_idx: set = set()
    inc_idx: set = set()
    if config.diagnostics:
        state_idx.update(_diag_state_grid(N).tolist())
    for c in config.checks:
        name = c["name"]
        lo, hi = c.get("window", (max(1, N // 10), N))
        lo, hi = int(lo), int(hi)
        if name in ("noise_excitation", "jump_moments"):
            k = int(c.get("k", 1))
            base = np.unique(
                np.geomspace(max(lo, 1), max(hi - k, lo + 1), 64).astype(np.int64)
            )
            for b in base:
                inc_idx.update(range(int(b), min(int(b) + k, N)))
        elif name == "tail_noise":
            lo = max(lo, hi - _MAX_CONTIGUOUS_WINDOW)
            inc_idx.update(range(lo, min(hi, N)))
    return engine.CaptureSpec(
        state_indices=tuple(sorted(state_idx)), increment_indices=tuple(sorted(inc_idx))
    )


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _resolve_split_and_constants(model: models.Model):
    """Numeric split at the declared trap, plus effective (mu, nu).

    Declared model constants take precedence over the numeric split: models
    that declare them derive the values exactly, and degenerate spectra (for
    which the numeric split sees only the center block) would otherwise
    misreport the contraction rate.  The numeric split is still returned for
    projections when it certifies repulsive directions.
    """
    trap = model.trap
    if trap is None:
        return None, None, None
    split = None
    try:
        split = spectral.split_jacobian(np.asarray(trap.jacobian, dtype=np.float64))
    except (AmbiguousSpectrumError, TrapcheckError):
        split = None
    mu = trap.mu
    if mu is None and split is not None:
        mu = split.mu
    return split, mu, trap.nu


def _run_checks(config, model, schedule, summary, rates, split, mu_eff, nu_eff):
    conds = []
    traj = None
    a_used, k_used = None, None

    def _trajectory():
        nonlocal traj
        if traj is None:
            traj = engine.run(
                model, schedule, _x0_of(config, model), config.N, config.master_seed
            )
        return traj

    for c in config.checks:
        name = c["name"]
        window = tuple(c["window"]) if "window" in c else None
        if name == "noise_excitation":
            k = int(c.get("k", 1))
            a = float(c.get("a", 4.0))
            k_used = max(k_used or 0, k)
            a_used = a
            use_split = split if (split is not None and split.delta_plus >= 1) else None
            conds.append(
                hypotheses.check_noise_excitation(
                    summary,
                    split=use_split,
                    k=k,
                    a=a,
                    window=window,
                    threshold=float(c.get("threshold", hypotheses.DEFAULT_EXCITATION_THRESHOLD)),
                )
            )
        elif name == "remainder":
            conds.append(
                hypotheses.check_remainder(
                    _trajectory(),
                    mode=c.get("mode", "square_summable"),
                    nu=float(c.get("nu", nu_eff or 1.0)),
                    window=window,
                    schedule=schedule,
                )
            )
        elif name == "drift_sign":
            x_star = (
                model.trap.x_star if model.trap is not None else np.zeros(model.dim)
            )
            adapted = None
            project = None
            if c.get("adapted") and split is not None and split.delta_plus >= 1:
                # the adapted form lives on the repulsive block, so the
                # vectors must be projected into its coordinates first
                adapted = spectral.adapted_inner_product(split.H_plus)
                project = split.P_inv[: split.delta_plus]
            conds.append(
                hypotheses.check_drift_sign(
                    _trajectory(),
                    x_star,
                    rho=float(c.get("rho", 1.0)),
                    mode=c.get("mode", "nonneg"),
                    beta=float(c.get("beta", 0.0)),
                    window=window,
                    adapted=adapted,
                    project=project,
                )
            )
        elif name == "rate_condition":
            nu = c.get("nu", nu_eff)
            if nu is None:
                raise ConfigError("rate_condition needs nu (config or model)", "checks")
            ref = split if (split is not None and mu_eff is None) else float(mu_eff)
            conds.append(hypotheses.check_rate_condition(rates, ref, float(nu)))
        elif name == "jump_moments":
            a = float(c.get("a", 4.0))
            a_used = a
            conds.append(
                hypotheses.check_jump_moments(summary, a=a, schedule=schedule, window=window)
            )
        elif name == "tail_noise":
            if split is None:
                conds.append(
                    hypotheses.ConditionResult(
                        "tail_noise_smallness",
                        "inconclusive",
                        {"reason": "no admissible split at the trap"},
                        None,
                    )
                )
            else:
                nu = float(c.get("nu", nu_eff or 1.0))
                conds.append(
                    hypotheses.check_tail_noise_condition(
                        summary, split, nu, schedule, window=window
                    )
                )
    return conds, a_used, k_used


def _x0_of(config: ExperimentConfig, model: models.Model) -> np.ndarray:
    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=np.float64)
        if x0.shape != (model.dim,):
            raise ConfigError(f"x0 must have dimension {model.dim}", "x0")
        return x0
    return model.initial_state()


def _run_diagnostics(config, model, schedule, summary):
    out = {}
    for dg in config.diagnostics:
        name = dg["name"]
        if name == "apt":
            res = flow.ensemble_apt_deficit(
                summary,
                schedule,
                model.field,
                T=float(dg.get("T", 1.0)),
                normalization=dg.get("normalization", "scale"),
                n_restarts=int(dg.get("n_restarts", 48)),
            )
            out["apt"] = {
                "median_rate": res.median,
                "n_rates": int(np.isfinite(res.rates).sum()),
                "n_excluded_restarts": res.n_excluded,
            }
        elif name == "manifold_rate":
            split, mu, _ = _resolve_split_and_constants(model)
            use_split = split if (split is not None and 1 <= split.delta_plus < model.dim) else None
            K = model.manifold_K
            if use_split is None and K is None:
                out["manifold_rate"] = {"error": "model declares no invariant set"}
                continue
            res = flow.ensemble_manifold_rate(
                summary,
                schedule,
                K=K if use_split is None else None,
                split=use_split,
                x_star=model.trap.x_star if model.trap is not None else None,
            )
            out["manifold_rate"] = {
                "median_rate": res.median,
                "n_rates": int(np.isfinite(res.rates).sum()),
            }
    return out


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    out_dir=None,
    with_checks: bool = True,
) -> tuple[int, dict]:
    """Execute a config end to end; returns (exit_code, summary dict) and
    writes ``summary.json`` (plus optional trajectory/diagnostic CSVs)."""
    model = _build_model(config.model)
    schedule = _build_schedule(config.schedule, model, config.N)
    x0 = _x0_of(config, model)
    capture = _capture_plan(config) if with_checks else engine.CaptureSpec()

    summary = engine.monte_carlo(
        model,
        schedule,
        x0,
        config.N,
        config.n_runs,
        config.master_seed,
        workers=workers,
        captures=capture,
    )
    if summary.blowup_count > config.max_blowup_fraction * config.n_runs:
        raise TrapcheckError(
            f"{summary.blowup_count}/{config.n_runs} runs blew up "
            f"(limit {config.max_blowup_fraction:.0%})"
        )

    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(config.raw),
        "master_seed": config.master_seed,
        "ensemble": summary.to_dict(config.near_trap_radius),
        "report": None,
        "rates": None,
        "split": None,
        "diagnostics": {},
    }

    exit_code = 0
    if with_checks:
        lo = config.rate_window[0] if config.rate_window else max(10, config.N // 100)
        hi = config.rate_window[1] if config.rate_window else config.N
        rates = sequences.rate_constants(schedule, (lo, hi))
        split, mu_eff, nu_eff = _resolve_split_and_constants(model)
        doc["rates"] = rates.to_dict()
        doc["split"] = split.to_dict() if split is not None else None
        conds, a_used, k_used = _run_checks(
            config, model, schedule, summary, rates, split, mu_eff, nu_eff
        )
        theorem = config.theorem or (
            "th5d"
            if any(c["name"] == "rate_condition" for c in config.checks)
            else "th2n"
        )
        report = hypotheses.HypothesisReport(
            theorem_id=theorem,
            conditions=tuple(conds),
            constants=hypotheses.make_constants(
                lambda_hat=rates.lambda_hat,
                mu=mu_eff,
                nu=nu_eff,
                a=a_used,
                excitation_k=k_used,
            ),
        )
        doc["report"] = report.to_dict()
        doc["diagnostics"] = _run_diagnostics(config, model, schedule, summary)
        if report.verdict == "fail":
            exit_code = 2

    out = Path(out_dir if out_dir is not None else config.output.get("dir", "trapcheck_out"))
    out.mkdir(parents=True, exist_ok=True)
    n_traj = int(config.output.get("trajectories", 0))
    for i in range(min(n_traj, config.n_runs)):
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        traj = engine.run(
            model, schedule, x0, config.N, engine._seed_for_run(config.master_seed, i)
        )
        traj.to_csv(tdir / f"run_{i}.csv")
    if config.output.get("write_diagnostics") and config.diagnostics:
        ddir = out / "diagnostics"
        ddir.mkdir(exist_ok=True)
        traj = engine.run(model, schedule, x0, config.N, config.master_seed)
        path = flow.time_change(traj, schedule, indices=_diag_state_grid(config.N))
        for dg in config.diagnostics:
            if dg["name"] == "apt":
                flow.apt_deficit(
                    path, model.field, T=float(dg.get("T", 1.0)),
                    normalization=dg.get("normalization", "scale"),
                ).to_csv(ddir / "apt.csv")
            elif dg["name"] == "manifold_rate" and model.manifold_K is not None:
                flow.manifold_rate(path, K=model.manifold_K).to_csv(
                    ddir / "manifold_rate.csv"
                )

    doc_meta = dict(doc)
    doc_meta["meta"] = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "workers": int(workers),
    }
    (out / "summary.json").write_text(canonical_json(doc_meta))
    return exit_code, doc_meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_experiment(args, with_checks: bool) -> int:
    try:
        config = ExperimentConfig.load(args.config)
        if args.seed is not None:
            raw = dict(config.raw)
            raw["master_seed"] = int(args.seed)
            config = ExperimentConfig.from_dict(raw)
        code, doc = run_experiment(
            config,
            workers=args.workers,
            out_dir=args.out,
            with_checks=with_checks,
        )
    except TrapcheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        print(canonical_json(doc), end="")
    else:
        ens = doc["ensemble"]
        print(
            f"{ens['model_id']}: {ens['n_runs']} runs, N={ens['N']}, "
            f"near-trap fraction {ens['near_trap_fraction']:.4g} "
            f"(radius {ens['near_trap_radius']:g}), blowups {ens['blowup_count']}"
        )
        if doc.get("report"):
            print(_report_text(doc["report"]))
        for name, vals in (doc.get("diagnostics") or {}).items():
            print(f"diagnostic {name}: {vals}")
    return code


def _parse_matrix(token: str) -> np.ndarray:
    try:
        return np.asarray(json.loads(token), dtype=np.float64)
    except (json.JSONDecodeError, ValueError):
        pass
    p = Path(token)
    if not p.exists():
        raise ConfigError(f"not inline JSON and no such file: {token}", "matrix")
    text = p.read_text()
    try:
        return np.asarray(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, ValueError):
        return np.atleast_2d(np.loadtxt(p, delimiter=","))


def _cmd_spectral(args) -> int:
    try:
        H = _parse_matrix(args.matrix)
        split = spectral.split_jacobian(H)
    except AmbiguousSpectrumError as exc:
        print(f"ambiguous spectrum: {exc}", file=sys.stderr)
        return 2
    except (TrapcheckError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    lam = None
    if split.delta_plus >= 1:
        lam = spectral.adapted_inner_product(split.H_plus).lam
    doc = split.to_dict()
    doc["coercivity_lambda"] = lam
    if args.json:
        print(canonical_json(doc), end="")
    else:
        print(
            f"classification={split.classification} delta_plus={split.delta_plus} "
            f"delta_minus={split.delta_minus} mu={split.mu:.6g}"
            + (f" lambda={lam:.6g}" if lam is not None else "")
        )
    # no certified repulsive behavior -> signal via exit code
    return 2 if split.classification == "center" else 0


def _report_text(rep: dict) -> str:
    lines = [
        f"theorem: {rep['theorem_id']}    overall: {rep['verdict']}",
        "constants: "
        + ", ".join(f"{k}={v}" for k, v in rep["constants"].items() if v is not None),
    ]
    for c in rep["conditions"]:
        est = ", ".join(f"{k}={v}" for k, v in c["estimates"].items())
        lines.append(f"  {c['name']:<28} {c['verdict']:<14} {est}")
    return "\n".join(lines)


def _cmd_report(args) -> int:
    p = Path(args.summary)
    if p.is_dir():
        p = p / "summary.json"
    try:
        doc = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    ens = doc.get("ensemble", {})
    print(
        f"model {ens.get('model_id')}: {ens.get('n_runs')} runs, N={ens.get('N')}, "
        f"near-trap fraction {ens.get('near_trap_fraction')}, "
        f"blowups {ens.get('blowup_count')}"
    )
    print(f"config hash: {doc.get('config_hash')}")
    if doc.get("rates"):
        r = doc["rates"]
        print(
            f"rates: lambda_hat={r['lambda_hat']:.6g} "
            f"ratio window [{r['ratio_inf']:.6g}, {r['ratio_sup']:.6g}]"
        )
    if doc.get("report"):
        print(_report_text(doc["report"]))
    for name, vals in (doc.get("diagnostics") or {}).items():
        print(f"diagnostic {name}: {vals}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trapcheck",
        description="Simulate stochastic-approximation ensembles and check "
        "non-convergence conditions at unstable equilibria.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("simulate", "run the ensemble and write summary.json"),
        ("check", "run ensemble, hypothesis checks, and diagnostics"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--json", action="store_true", help="print the summary JSON")

    p = sub.add_parser("spectral", help="classify a Jacobian matrix")
    p.add_argument("matrix", help="inline JSON (e.g. '[[1,0],[0,-2]]') or a file path")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("report", help="render an existing summary.json")
    p.add_argument("summary", help="summary.json path or its directory")

    args = parser.parse_args(argv)
    if args.command == "simulate":
        return _cmd_experiment(args, with_checks=False)
    if args.command == "check":
        return _cmd_experiment(args, with_checks=True)
    if args.command == "spectral":
        return _cmd_spectral(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
