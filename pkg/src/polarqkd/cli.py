"""``polarqkd`` command line.

Exit codes: 0 ok, 2 usage or config error, 3 statistical check failed
(only with ``--strict``; ``self-test`` is always strict).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments, noise
from .experiments import RunConfig

EXIT_OK, EXIT_USAGE, EXIT_STAT = 0, 2, 3


class UsageError(Exception):
    pass


def _globals_parser() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    g.add_argument("--out", default=None, help="output file (directory for simulate)")
    g.add_argument("--strict", action="store_true", default=None, help="exit 3 if a statistical check fails")
    g.add_argument("--config", default=None, help="JSON config; flags override its values")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _globals_parser()
    p = argparse.ArgumentParser(prog="polarqkd", description="Rotation-based QKD simulator and noise analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="closed-form, series and quadrature flip probabilities")
    a.add_argument("--x", type=float, default=None, help="link half-width in radians")
    a.add_argument("--links", type=int, default=None)
    a.add_argument("--quad-steps", type=int, default=None)

    f = sub.add_parser("figure", parents=[common], help="flip probability curve as CSV (figure 4: one link, 6: two)")
    f.add_argument("figure", type=int, choices=sorted(experiments.FIGURE_LINKS))
    f.add_argument("--x-min", type=float, default=None)
    f.add_argument("--x-max", type=float, default=None)
    f.add_argument("--steps", type=int, default=None)
    f.add_argument("--trials", type=int, default=None)

    s = sub.add_parser("simulate", parents=[common], help="run a protocol from a config file")
    s.add_argument("--protocol", choices=["bb84", "two-stage", "three-stage"], default=None)
    s.add_argument("--x", type=float, default=None)
    s.add_argument("--rounds", type=int, default=None)
    s.add_argument("--eve", dest="eve_kind", choices=["none", "intercept_resend", "siphon"], default=None)
    s.add_argument("--reconcile", action="store_true", default=None)

    r = sub.add_parser("reconcile-demo", parents=[common], help="reconcile synthetic keys at a given error rate")
    r.add_argument("--qber", type=float, default=None)
    r.add_argument("--key-bits", type=int, default=None)
    r.add_argument("--runs", type=int, default=None)
    r.add_argument("--passes", type=int, default=None)
    r.add_argument("--block-length", default=None, help="integer or 'auto'")

    sub.add_parser("self-test", parents=[common], help="quick formula and simulation checks")
    return p


DEFAULTS = {
    "analyze": {"x": 0.1, "links": 1, "quad_steps": 10_000},
    "figure": {"x_min": 0.01, "x_max": 0.1, "steps": 10, "trials": 100_000},
    "reconcile-demo": {"qber": 0.01, "key_bits": 1024, "runs": 1, "passes": 4, "block_length": "auto"},
    "self-test": {},
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def _resolve(args: argparse.Namespace, config: dict, defaults: dict) -> dict:
    """Flag value if given, else config value, else default."""
    out = {}
    for key in set(defaults) | {"seed", "out", "strict"}:
        val = getattr(args, key, None)
        if val is None:
            val = config.get(key, defaults.get(key))
        out[key] = val
    out["seed"] = 0 if out["seed"] is None else out["seed"]
    out["strict"] = bool(out["strict"])
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_analyze(opts: dict) -> int:
    x, links, steps = float(opts["x"]), int(opts["links"]), int(opts["quad_steps"])
    if links < 1:
        raise UsageError("--links must be >= 1")
    try:
        res = noise.analyze(x, links, steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    f = experiments.fmt
    text = (
        f"x: {f(res.x)}\nlinks: {res.n_links}\n"
        f"exact: {f(res.exact)}\nseries: {f(res.series)}\nquadrature: {f(res.quadrature)}\n"
        f"series_minus_exact: {f(res.series_deviation)}\n"
        f"quadrature_minus_exact: {f(res.quadrature_deviation)}\n"
        f"quadrature_steps: {res.quadrature_steps}\n"
    )
    _emit(text, opts["out"])
    if opts["strict"] and abs(res.quadrature_deviation) > 1e-9:
        return EXIT_STAT
    return EXIT_OK


def cmd_figure(opts: dict, figure: int) -> int:
    try:
        points = experiments.figure_curve(
            figure, float(opts["x_min"]), float(opts["x_max"]), int(opts["steps"]), int(opts["trials"]), int(opts["seed"])
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(experiments.format_csv(points), opts["out"])
    failed = [p for p in points if not p.passes]
    for p in failed:
        print(f"3-sigma check failed at x={experiments.fmt(p.x)}", file=sys.stderr)
    return EXIT_STAT if opts["strict"] and failed else EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: dict) -> int:
    data = {k: v for k, v in config.items() if k not in ("out", "strict")}
    for key in ("seed", "protocol", "x", "rounds", "eve_kind", "reconcile"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    try:
        cfg = RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    out = args.out if args.out is not None else config.get("out", ".")
    Path(out).mkdir(parents=True, exist_ok=True)
    report = experiments.simulate(cfg, out)
    for run in report["runs"]:
        s = run["summary"]
        line = (f"trial {run['trial']}: {s['protocol']} rounds={s['rounds']} compared={s['compared']} "
                f"qber={experiments.fmt(s['qber'])} expected={experiments.fmt(run['expected_noise_qber'])} "
                f"sift_rate={experiments.fmt(s['sift_rate'])} "
                f"intensity={experiments.fmt(run['intensity']['relative_intensity'])}")
        if "reconciliation" in run:
            line += f" hash_match={str(run['reconciliation']['hash_match']).lower()}"
        print(line)
    strict = args.strict or config.get("strict", False)
    bad = any(r["noise_check_pass"] is False for r in report["runs"])
    return EXIT_STAT if strict and bad else EXIT_OK


def cmd_reconcile_demo(opts: dict) -> int:
    block = opts["block_length"]
    if block != "auto":
        try:
            block = int(block)
        except ValueError as exc:
            raise UsageError("--block-length must be an integer or 'auto'") from exc
    try:
        result = experiments.reconcile_demo(float(opts["qber"]), int(opts["key_bits"]), int(opts["seed"]),
                                            int(opts["runs"]), int(opts["passes"]), block)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    parts = []
    for i, rep in enumerate(result.reports):
        parts.append(f"[run {i}]\n{rep.to_text()}")
    runs = len(result.reports)
    parts.append(f"[summary]\nruns: {runs}\nhash_matches: {result.matches}\n")
    _emit("\n".join(parts), opts["out"])
    if opts["strict"] and result.matches < 0.95 * runs:
        return EXIT_STAT
    return EXIT_OK


def cmd_self_test(opts: dict) -> int:
    from .selftest import run_checks

    results = run_checks(int(opts["seed"]))
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    _emit("\n".join(lines) + "\n", opts["out"])
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_STAT


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(args, config)
        opts = _resolve(args, config, DEFAULTS[args.command])
        if args.command == "analyze":
            return cmd_analyze(opts)
        if args.command == "figure":
            return cmd_figure(opts, args.figure)
        if args.command == "reconcile-demo":
            return cmd_reconcile_demo(opts)
        return cmd_self_test(opts)
    except UsageError as exc:
        print(f"polarqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
