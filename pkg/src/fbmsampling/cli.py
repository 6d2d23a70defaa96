"""Command-line front end.

Subcommands::

    optimize-det       optimal deterministic schedule
    optimize-level     KW-tuned threshold policy
    reproduce-tables   recompute the reference tables and compare
    distortion         evaluate a given schedule or policy
    simulate-path      write one simulated path (and its trigger times)

Exit codes: 0 success, 1 acceptance failure, 2 invalid input, 3 non-convergence
or numerical failure.  JSON outputs follow ``data/output_schema.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fbm
from .distortion import SamplingSchedule, distortion_multi, distortion_one
from .errors import (
    ConditioningError,
    InvalidInputError,
    ObservableError,
    QuadratureError,
    SynthesisError,
)
from .kw import KwConfig, KwProblem, final_distortion, kw_optimize
from .level import (
    ThresholdPolicy,
    empirical_distortion,
    one_sample_observations,
    threshold_exponent,
    trigger_times,
)
from .optimize import optimize_multi
from .tables import comparison_csv, reference_tables, reproduce_table

log = logging.getLogger("fbmsampling")

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

THREADS_ENV = "FBMSAMPLING_THREADS"
MAX_DET_SAMPLES = 8


@dataclass
class ExperimentConfig:
    """Validated command parameters."""

    command: str
    h: Optional[float] = None
    t_end: float = 20.0
    n: int = 1
    mode: str = "full"
    grid_n: int = fbm.DEFAULT_GRID_N
    n_paths: int = 0
    seed: int = 0
    threads: int = 1
    output: Optional[Path] = None
    fmt: str = "json"
    times: tuple = ()
    q: tuple = ()
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.h is not None:
            fbm.check_hurst(self.h)
        fbm.check_horizon(self.t_end)
        if self.mode not in ("full", "truncated"):
            raise InvalidInputError(f"mode must be 'full' or 'truncated', got {self.mode!r}")
        if self.n < 1:
            raise InvalidInputError(f"number of samples must be at least 1, got {self.n}")
        if self.n_paths < 0:
            raise InvalidInputError("path count must be non-negative")
        if self.threads < 1:
            raise InvalidInputError("--threads must be at least 1")
        if self.fmt not in ("json", "csv"):
            raise InvalidInputError(f"unknown output format {self.fmt!r}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text)


def _json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f3(x: float) -> str:
    return f"{x:.3f}"


# ---------------------------------------------------------------------------
# commands


def cmd_optimize_det(cfg: ExperimentConfig) -> int:
    if not 1 <= cfg.n <= MAX_DET_SAMPLES:
        raise InvalidInputError(f"optimize-det needs 1 <= n <= {MAX_DET_SAMPLES}, got {cfg.n}")
    res = optimize_multi(cfg.h, cfg.t_end, cfg.n, cfg.mode, seed=cfg.seed)
    if cfg.fmt == "json":
        out = {"command": "optimize-det", "h": cfg.h, "n": cfg.n, "mode": cfg.mode}
        out.update(res.to_dict())
        text = _json(out)
    else:
        header = ["h"] + [f"tau_{i + 1}" for i in range(cfg.n)] + ["distortion"]
        row = [f"{cfg.h:.1f}"] + [_f3(t) for t in res.schedule.times] + [_f3(res.distortion.value)]
        text = _csv(header, [row])
    _emit(text, cfg.output)
    if not res.converged:
        log.error("optimizer did not reach a stationary point (gradient norm %.2e)", res.gradient_norm)
        return EXIT_NUMERICAL
    return EXIT_OK


def _kw_problem(cfg: ExperimentConfig) -> KwProblem:
    kind = "one-sample" if cfg.n == 1 else f"multi-{cfg.mode}"
    return KwProblem(kind, cfg.h, cfg.t_end, cfg.n, cfg.grid_n)


def cmd_optimize_level(cfg: ExperimentConfig) -> int:
    problem = _kw_problem(cfg)
    x = cfg.extra
    config = KwConfig(
        batch_size=x["batch_size"],
        max_iter=x["max_iter"],
        seed=cfg.seed,
        final_paths=x["final_paths"],
    )
    res = kw_optimize(problem, config)
    if x.get("trace"):
        _emit(res.trace_csv(), Path(x["trace"]))
    if cfg.fmt == "json":
        out = {"command": "optimize-level", "n": cfg.n, "mode": cfg.mode, "seed": cfg.seed}
        out.update(res.to_dict())
        text = _json(out)
    else:
        header = ["h"] + [f"q_{i + 1}" for i in range(cfg.n)] + ["eta_1", "distortion", "std_error"]
        row = (
            [f"{cfg.h:.1f}"]
            + [_f3(v) for v in res.policy.q]
            + [_f3(res.eta), _f3(res.distortion.value), _f3(res.distortion.std_error)]
        )
        text = _csv(header, [row])
    _emit(text, cfg.output)
    if not res.converged:
        log.error("KW iterates did not settle within %d iterations", config.max_iter)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_reproduce_tables(cfg: ExperimentConfig) -> int:
    x = cfg.extra
    which = x["which"]
    tables = sorted(int(k) for k in reference_tables()["tables"]) if which == "all" else [int(which)]
    config = KwConfig(
        batch_size=x["batch_size"],
        max_iter=x["max_iter"],
        seed=cfg.seed,
        final_paths=x["final_paths"],
    )
    out_dir = Path(x["out_dir"]) if x.get("out_dir") else None
    all_rows = []
    failed_det = False
    for k in tables:
        log.info("reproducing table %d", k)
        rows = reproduce_table(k, config, threads=cfg.threads)
        all_rows.extend(rows)
        if out_dir is not None:
            _emit(comparison_csv(rows), out_dir / f"table_{k}.csv")
        if k <= 5 and any(r.status == "fail" for r in rows):
            failed_det = True
    sys.stdout.write(comparison_csv(all_rows))
    return EXIT_ACCEPTANCE if failed_det else EXIT_OK


def _sweep_schedule_curve(cfg: ExperimentConfig, points: int) -> str:
    """(tau_1, J(tau_1)) for a single deterministic sample."""
    taus = np.linspace(cfg.t_end / points, cfg.t_end, points)
    rows = [[f"{t:.6g}", f"{distortion_one(t, cfg.h, cfg.t_end).value:.6g}"] for t in taus]
    return _csv(["x", "y"], rows)


def _sweep_threshold_curve(cfg: ExperimentConfig, points: int, n_paths: int) -> str:
    """(eta, J(eta)) for a one-sample threshold policy on shared paths."""
    scale = cfg.t_end ** threshold_exponent(cfg.h)
    etas = np.linspace(0.02, 2.5, points) * scale
    paths = fbm.simulate_paths(cfg.h, cfg.t_end, cfg.grid_n, n_paths, seed=cfg.seed)
    obs = one_sample_observations(paths, etas, cfg.h, cfg.t_end)
    base = cfg.t_end ** (2 * cfg.h + 1) / (2 * cfg.h + 1)
    rows = [[f"{e:.6g}", f"{base - o.mean():.6g}"] for e, o in zip(etas, obs)]
    return _csv(["x", "y"], rows)


def cmd_distortion(cfg: ExperimentConfig) -> int:
    x = cfg.extra
    if bool(cfg.times) == bool(cfg.q):
        raise InvalidInputError("give exactly one of --times or --q")
    closed = observable = mc = None
    if cfg.times:
        sched = SamplingSchedule(np.asarray(cfg.times), cfg.t_end)
        closed = distortion_multi(sched, cfg.h, cfg.mode)
        design = {"times": list(cfg.times)}
        if cfg.n_paths:
            mc = empirical_distortion(sched, cfg.h, cfg.t_end, cfg.n_paths, cfg.seed, cfg.mode)
    else:
        policy = ThresholdPolicy(np.asarray(cfg.q), cfg.h, cfg.t_end)
        design = {"q": list(cfg.q)}
        if not cfg.n_paths:
            raise InvalidInputError("threshold policies need --mc to set the number of paths")
        if policy.n == 1 or cfg.mode == "truncated" or policy.n <= 3:
            problem = KwProblem(
                "one-sample" if policy.n == 1 else f"multi-{cfg.mode}",
                cfg.h,
                cfg.t_end,
                policy.n,
                cfg.grid_n,
            )
            observable = final_distortion(problem, policy.q, cfg.n_paths, cfg.seed)
        mc = empirical_distortion(policy, cfg.h, cfg.t_end, cfg.n_paths, cfg.seed, cfg.mode, cfg.grid_n)

    if x.get("emit_curve"):
        points = x["curve_points"]
        if cfg.times:
            text = _sweep_schedule_curve(cfg, points)
        else:
            text = _sweep_threshold_curve(cfg, points, cfg.n_paths)
        _emit(text, Path(x["emit_curve"]))

    def rep(r):
        return None if r is None else r.to_dict()

    if cfg.fmt == "json":
        out = {
            "command": "distortion",
            "h": cfg.h,
            "horizon": cfg.t_end,
            "mode": cfg.mode,
            "design": design,
            "closed_form": rep(closed),
            "observable": rep(observable),
            "monte_carlo": rep(mc),
            "n_paths": cfg.n_paths or None,
            "seed": cfg.seed,
        }
        text = _json(out)
    else:
        rows = []
        for label, r in (("closed_form", closed), ("observable", observable), ("monte_carlo", mc)):
            if r is not None:
                se = "" if r.std_error is None else _f3(r.std_error)
                rows.append([label, _f3(r.value), se])
        text = _csv(["estimate", "distortion", "std_error"], rows)
    _emit(text, cfg.output)
    return EXIT_OK


def cmd_simulate_path(cfg: ExperimentConfig) -> int:
    path = fbm.simulate_path(cfg.h, cfg.t_end, cfg.grid_n, seed=cfg.seed, index=cfg.extra["index"])
    _emit(path.to_csv(), cfg.output)
    if cfg.q:
        outcome = trigger_times(path, ThresholdPolicy(np.asarray(cfg.q), cfg.h, cfg.t_end))
        target = cfg.extra.get("triggers")
        if target:
            _emit(outcome.to_csv(), Path(target))
        else:
            sys.stderr.write(outcome.to_csv())
    return EXIT_OK


COMMANDS = {
    "optimize-det": cmd_optimize_det,
    "optimize-level": cmd_optimize_level,
    "reproduce-tables": cmd_reproduce_tables,
    "distortion": cmd_distortion,
    "simulate-path": cmd_simulate_path,
}


# ---------------------------------------------------------------------------
# argument parsing


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbmsampling", description=__doc__.splitlines()[0])
    p.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help=f"worker threads for independent runs (default from ${THREADS_ENV}, else 1)",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_h=True):
        sp.add_argument("--h", type=float, required=need_h, help="Hurst parameter in (0, 1)")
        sp.add_argument("--t", type=float, default=20.0, help="horizon T")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output", type=Path, help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("optimize-det", help="optimal deterministic schedule")
    common(sp)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--mode", choices=("full", "truncated"), default="full")

    sp = sub.add_parser("optimize-level", help="KW-tuned threshold policy")
    common(sp)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--mode", choices=("full", "truncated"), default="full")
    sp.add_argument("--batch-size", type=int, default=KwConfig.batch_size)
    sp.add_argument("--max-iter", type=int, default=KwConfig.max_iter)
    sp.add_argument("--final-paths", type=int, default=KwConfig.final_paths)
    sp.add_argument("--grid-n", type=int, default=fbm.DEFAULT_GRID_N)
    sp.add_argument("--trace", help="write the KW iterate trace CSV here")

    sp = sub.add_parser("reproduce-tables", help="recompute reference tables")
    sp.add_argument("--which", default="all", choices=[str(k) for k in range(1, 11)] + ["all"])
    sp.add_argument("--out-dir", help="write one comparison CSV per table here")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch-size", type=int, default=KwConfig.batch_size)
    sp.add_argument("--max-iter", type=int, default=KwConfig.max_iter)
    sp.add_argument("--final-paths", type=int, default=KwConfig.final_paths)

    sp = sub.add_parser("distortion", help="evaluate a schedule or threshold policy")
    common(sp)
    sp.add_argument("--times", type=_float_list, default=(), help="comma-separated sample times")
    sp.add_argument("--q", type=_float_list, default=(), help="comma-separated threshold coefficients")
    sp.add_argument("--mode", choices=("full", "truncated"), default="full")
    sp.add_argument("--mc", type=int, default=0, help="Monte Carlo paths (0 = none)")
    sp.add_argument("--grid-n", type=int, default=fbm.DEFAULT_GRID_N)
    sp.add_argument("--emit-curve", help="write an (x, y) sweep CSV here")
    sp.add_argument("--curve-points", type=int, default=200)

    sp = sub.add_parser("simulate-path", help="write one simulated path as CSV")
    common(sp)
    sp.add_argument("--grid-n", type=int, default=fbm.DEFAULT_GRID_N)
    sp.add_argument("--index", type=int, default=0, help="path index within the seed")
    sp.add_argument("--q", type=_float_list, default=(), help="threshold coefficients for trigger output")
    sp.add_argument("--triggers", help="write trigger times CSV here")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    g = vars(args)
    cfg = ExperimentConfig(
        command=args.command,
        h=g.get("h"),
        t_end=g.get("t", 20.0),
        n=g["n"] if "n" in g else (len(g.get("q") or ()) or 1),
        mode=g.get("mode", "full"),
        grid_n=g.get("grid_n", fbm.DEFAULT_GRID_N),
        n_paths=g.get("mc", 0),
        seed=g.get("seed", 0),
        threads=args.threads,
        output=g.get("output"),
        fmt=g.get("format", "json"),
        times=tuple(g.get("times") or ()),
        q=tuple(g.get("q") or ()),
    )
    for key in (
        "batch_size",
        "max_iter",
        "final_paths",
        "trace",
        "which",
        "out_dir",
        "emit_curve",
        "curve_points",
        "index",
        "triggers",
    ):
        if key in g:
            cfg.extra[key] = g[key]
    cfg.validate()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except InvalidInputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (ConditioningError, QuadratureError, ObservableError, SynthesisError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
