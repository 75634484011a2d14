"""Command-line entry point: ``scout run|sweep|oracle|diagnostics|validate-config``.

Config files are flat ``key = value`` text, ``#`` starts a comment.  Flags
override file values.  Exit codes: 0 success, 1 validation, 2 runtime,
3 diagnostic failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibrator import monte_carlo_tau_p_star, oracle_tau_p_star, p_err_uniform
from .environment import GroundTruth, conditional_min_eig_estimate, sample_contexts, uniform_ball
from .harness import CSV_COLUMNS, ExperimentConfig, Trace, aggregate, run_sweep
from .numerics import make_rng, unit_ball_volume

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_DIAGNOSTIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1..50"`` or ``"1,4,9"``."""
    text = text.strip()
    if not text:
        return []
    if ".." in text:
        a, b = text.split("..")
        a, b = int(a), int(b)
        if b < a:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key == "seeds":
        return parse_seeds(raw)
    if key in ("d", "T"):
        return int(raw)
    if key in ("alpha", "delta", "refit_growth", "eps_min", "kappa"):
        return float(raw)
    if key in ("c_B", "c_slack"):
        return None if raw in ("", "default", "None") else float(raw)
    if key == "project":
        if raw in ("", "default", "None"):
            return None
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return raw


def read_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            key = "seeds"
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown field {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: field {key!r}: {exc}") from exc
    return values


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Resolve a config from an optional file plus flag overrides, applying defaults."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(read_config_text(text, str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _fmt_value(v) -> str:
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(config: ExperimentConfig) -> str:
    lines = [f"# format_version = {FORMAT_VERSION}", f"# delta_prime = {config.delta_prime!r}"]
    for name, value in config.to_dict().items():
        lines.append(f"{name} = {_fmt_value(value)}")
    return "\n".join(lines) + "\n"


def _fmt_float(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".9g")


def trace_csv(trace: Trace, config: ExperimentConfig, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION} seed={seed}\n")
    for line in emit_config(config).splitlines():
        if not line.startswith("#"):
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    cols = [trace.cols[c] for c in CSV_COLUMNS]
    floats = {"score", "tau_t", "b_t", "lambda_min"}
    for row in zip(*cols):
        w.writerow([_fmt_float(v) if name in floats else int(v) for name, v in zip(CSV_COLUMNS, row)])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def aggregate_json(config: ExperimentConfig, summaries, report) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "delta_prime": config.delta_prime,
        "eps_q_floor": config.eps_min,
        "runs": [s.to_dict() for s in summaries],
        "aggregate": report.to_dict(),
    }
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _run_config(config: ExperimentConfig, out: Path, label: str) -> dict:
    results = run_sweep(config)
    summaries = [s for _, s in results]
    for trace, s in results:
        _write(out / f"{label}_seed{s.seed}.csv", trace_csv(trace, config, s.seed))
    report = aggregate(summaries)
    _write(out / f"{label}_aggregate.json", aggregate_json(config, summaries, report))
    return {"label": label, "violations": report.safety_violations, "slope": report.slope,
            "final_rate": report.mean_test_rate_final, "p_star": report.p_star}


def _overrides(args) -> dict:
    o = {"alpha": args.alpha, "delta": args.delta, "d": args.dim, "T": args.horizon,
         "mode": args.mode, "c_B": args.cb, "out": args.out}
    if args.seeds is not None:
        o["seeds"] = parse_seeds(args.seeds)
    elif args.seed is not None:
        o["seeds"] = [args.seed]
    return o


def cmd_run(args) -> int:
    config = parse_config(args.config, _overrides(args))
    info = _run_config(config, Path(config.out), f"d{config.d}_a{config.alpha:g}")
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = parse_config(args.config, _overrides(args))
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else [base.alpha]
    dims = [int(d) for d in args.dims.split(",")] if args.dims else [base.d]
    cells = [(d, a) for d, a in args.cells] if args.cells else [(d, a) for a in alphas for d in dims]
    for d, a in cells:
        cfg = dataclasses.replace(base, d=d, alpha=a)
        info = _run_config(cfg, Path(base.out), f"d{d}_a{a:g}")
        print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    alpha, d = args.alpha, args.dim
    if not 0 < alpha < 0.5:
        raise ConfigError("alpha must lie in (0, 0.5)")
    o = oracle_tau_p_star(alpha, d)
    rng = make_rng(args.seed, 0)
    gt = GroundTruth(np.eye(d)[0], uniform_ball(d))
    xs = sample_contexts(gt.distribution, args.samples, rng)
    tau_mc, p_mc, _ = monte_carlo_tau_p_star(gt.theta_star, xs, alpha)
    m = 1.0 / unit_ball_volume(d)
    lam0 = (m * o.tau_star ** (d + 2) * unit_ball_volume(d) / (o.p_star * (d + 2))) if o.p_star > 0 else 0.0
    print(f"tau_star      {o.tau_star:.9g}")
    print(f"p_star        {o.p_star:.9g}")
    print(f"p_err(0)      {p_err_uniform(0.0, d):.9g}")
    print(f"lambda0_min   {lam0:.9g}   (m = 1/V_d(1) = {m:.9g})")
    print(f"mc_tau_star   {tau_mc:.9g}   delta {tau_mc - o.tau_star:+.3e}")
    print(f"mc_p_star     {p_mc:.9g}   delta {p_mc - o.p_star:+.3e}")
    return EXIT_OK


def cmd_diagnostics(args) -> int:
    from .diagnostics import run_all

    results = run_all(n_samples=args.samples, seed=args.seed)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_DIAGNOSTIC


def cmd_validate(args) -> int:
    config = parse_config(args.config, _overrides(args))
    sys.stdout.write(emit_config(config))
    return EXIT_OK


def _cell(text: str):
    d, a = text.split(":")
    return int(d), float(a)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scout", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--seed", type=int)
        g.add_argument("--seeds", help="A..B or comma list")
        p.add_argument("--alpha", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--dim", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--mode", choices=["rigorous", "practical"])
        p.add_argument("--out")
        p.add_argument("--cb", type=float, help="confidence radius scale c_B")

    p = sub.add_parser("run", help="run every seed of one configuration")
    experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of (dimension, alpha) cells")
    experiment_flags(p)
    p.add_argument("--alphas", help="comma list, crossed with --dims")
    p.add_argument("--dims", help="comma list, crossed with --alphas")
    p.add_argument("--cell", dest="cells", action="append", type=_cell, help="explicit D:ALPHA cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="baseline threshold and test rate under the uniform ball")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("diagnostics", help="numeric validation suite")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("validate-config", help="print the resolved config")
    experiment_flags(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
