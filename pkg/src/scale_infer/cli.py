"""Command-line front end.

Subcommands: run a spec matrix, bench decode latency, analyze raw
telemetry into p_max bins, selftest the invariant battery. Master-seed
precedence: --seed flag, then the SCALE_SEED environment variable, then
the spec file's master_seed. Exit codes: 0 success, 2 configuration
error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import ExitStack
from importlib import resources
from pathlib import Path

from . import harness
from .harness import ConfigError

SEED_ENV_VAR = "SCALE_SEED"


def _master_seed_override(flag_value) -> int | None:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get(SEED_ENV_VAR)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None


def _resolve_spec_path(arg: str, stack: ExitStack) -> str:
    """A filesystem path, or the name of a spec shipped with the package
    (e.g. `ablation` -> scale_infer/specs/ablation.json)."""
    if Path(arg).exists():
        return arg
    name = arg if arg.endswith(".json") else f"{arg}.json"
    candidate = resources.files("scale_infer").joinpath("specs", name)
    if candidate.is_file():
        return str(stack.enter_context(resources.as_file(candidate)))
    raise ConfigError(f"spec not found: {arg!r} (no such file or shipped spec)")


def _parse_n_list(text: str) -> list:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--n expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError("--n list is empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scale-infer",
        description="Uncertainty-adaptive decoding experiments on a synthetic "
                    "pick-and-place world.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment spec (JSON file or "
                                       "shipped name: ablation, metrics, epsilon)")
    run_p.add_argument("spec")
    run_p.add_argument("--seed", type=int, default=None, help="master seed override")
    run_p.add_argument("--out", default=None, help="output directory for "
                                                   "summary.csv / timing.csv / raw.jsonl")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    bench_p = sub.add_parser("bench", help="latency scaling and adaptive-vs-greedy overhead")
    bench_p.add_argument("spec")
    bench_p.add_argument("--n", default="1,2,4,8,16",
                         help="comma-separated decode-sample counts per step")
    bench_p.add_argument("--seed", type=int, default=None)
    bench_p.add_argument("--out", default=None, help="output directory for bench.csv/bench.json")
    bench_p.add_argument("--episodes", type=int, default=8, help="measured episodes per N")
    bench_p.add_argument("--overhead-episodes", type=int, default=100,
                         help="episodes per strategy for the overhead ratio (0 skips)")

    an_p = sub.add_parser("analyze", help="success rate by episode-mean p_max bins")
    an_p.add_argument("raw", help="raw.jsonl produced by `run`")
    an_p.add_argument("--bins", type=int, default=5)
    an_p.add_argument("--out", default=None, help="write the bin table CSV here")

    sub.add_parser("selftest", help="run the fast invariant battery")
    return parser


def _cmd_run(args) -> int:
    with ExitStack() as stack:
        path = _resolve_spec_path(args.spec, stack)
        spec = harness.load_spec(path, master_seed=_master_seed_override(args.seed),
                                 out_dir=args.out)
    table, _ = harness.run_experiment(spec, jobs=args.jobs)
    sys.stdout.write(table.to_csv())
    if spec.out_dir is not None:
        print(f"# outputs: {Path(spec.out_dir) / 'summary.csv'}, timing.csv, raw.jsonl",
              file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    with ExitStack() as stack:
        path = _resolve_spec_path(args.spec, stack)
        spec = harness.load_spec(path, master_seed=_master_seed_override(args.seed))
    ns = _parse_n_list(args.n)
    result = harness.bench_latency(spec, ns, episodes_per_n=args.episodes,
                                   overhead_episodes=args.overhead_episodes)
    sys.stdout.write(harness.bench_csv(result))
    fit = result["fit"]
    print(f"# fit: slope={fit['slope_ms']:.4f} ms/sample, "
          f"intercept={fit['intercept_ms']:.4f} ms, r2={fit['r_squared']:.6f}")
    if result["overhead"] is not None:
        ov = result["overhead"]
        print(f"# overhead: greedy={ov['greedy_ms']:.4f} ms, "
              f"adaptive={ov['adaptive_ms']:.4f} ms, ratio={ov['ratio']:.4f}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(harness.bench_csv(result))
        (out / "bench.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_analyze(args) -> int:
    path = Path(args.raw)
    if not path.exists():
        raise ConfigError(f"raw telemetry file not found: {path}")
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc.msg}") from exc
    try:
        rows = harness.analyze_pmax_bins(records, args.bins)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    csv_text = harness.pmax_bins_csv(rows)
    sys.stdout.write(csv_text)
    if args.out is not None:
        Path(args.out).write_text(csv_text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "selftest":
            return 0 if harness.selftest() else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
