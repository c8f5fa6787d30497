"""Command-line entry point: ``desclab <subcommand> [flags]``.

Exit codes: 0 success, 1 a check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SUBCOMMANDS = ("generate", "descend", "sweep", "verify", "yule", "report")
VARIANT_FLAGS = {"sequential": "sequential", "polya": "polya-urn", "selfloop": "self-loop",
                 "uniform": "uniform"}
PIPELINE_FLAGS = {"bfs": "graph-bfs", "recursion": "recursion"}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format (default csv)")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads, 0 = all available (fallback: $DESCLAB_THREADS)")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--config", default=None, help="JSON experiment config; flags override it")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--m", type=int, default=None, help="edges per new vertex (default 2)")
    model.add_argument("--rho", type=float, default=None, help="additive fitness, rho > -m (default 0)")
    model.add_argument("--n", type=int, default=None, help="number of vertices (default 1000000)")
    model.add_argument("--variant", choices=tuple(VARIANT_FLAGS), default=None,
                       help="model construction (default polya)")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--reps", type=int, default=None, help="replicates (default 1000)")
    exp.add_argument("--pipeline", choices=tuple(PIPELINE_FLAGS), default=None,
                     help="descendant counting method (default recursion)")
    exp.add_argument("--t-grid", type=_floats, default=None,
                     help="comma-separated t values for the scaled mean curve")
    exp.add_argument("--allow-m1", action="store_true", default=None,
                     help="permit m = 1 (tree drift check)")

    parser = argparse.ArgumentParser(prog="desclab",
                                     description="Descendant counts in preferential attachment graphs.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    sub.add_parser("generate", parents=[common, model], help="write one graph as an edge list")
    sub.add_parser("descend", parents=[common, model, exp], help="distribution of X / n^nu")
    p = sub.add_parser("sweep", parents=[common, model, exp], help="descend over an n grid")
    p.add_argument("--n-grid", type=_ints, default=None,
                   help="comma-separated sizes (default 10000,100000,1000000)")
    p = sub.add_parser("verify", parents=[common], help="run the verification battery")
    p.add_argument("--suite", default="all", help="'all', check letters a-j, or check names")
    p.add_argument("--scale", choices=("full", "quick"), default=None, help="battery scale (default full)")
    p = sub.add_parser("yule", parents=[common], help="sample the time-changed Yule count")
    p.add_argument("--m", type=int, default=None, help="split size (default 2)")
    p.add_argument("--x", type=float, default=0.1, help="time-change parameter in (0, 1]")
    p.add_argument("--reps", type=int, default=None, help="independent runs (default 1000)")
    p = sub.add_parser("report", parents=[common], help="pretty-print a stored result table")
    p.add_argument("path", help="CSV or JSON result file")
    return parser


def resolve_threads(flag: int | None) -> int:
    if flag is None:
        env = os.environ.get("DESCLAB_THREADS", "").strip()
        flag = int(env) if env else 0
    if flag < 0:
        raise UsageError(f"--threads must be >= 0, got {flag}")
    return flag if flag > 0 else (os.cpu_count() or 1)


def apply_threads(threads: int) -> None:
    """Set the worker count; takes effect fully only before numba is imported."""
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(threads)
        return
    import numba

    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def resolve_config(args: argparse.Namespace):
    """Merge defaults, the ``--config`` file and explicit flags, in that order."""
    from .harness.experiments import ExperimentConfig

    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
    params = dict(data.pop("params", {}))
    flag_params = {
        "m": getattr(args, "m", None),
        "rho": getattr(args, "rho", None),
        "n": getattr(args, "n", None),
        "master_seed": args.seed,
        "variant": VARIANT_FLAGS.get(getattr(args, "variant", None) or "", None),
    }
    params.update({k: v for k, v in flag_params.items() if v is not None})
    params.setdefault("variant", "polya-urn")
    params.setdefault("n", 1_000_000)
    flags = {
        "replicates": getattr(args, "reps", None),
        "pipeline": PIPELINE_FLAGS.get(getattr(args, "pipeline", None) or "", None),
        "t_grid": getattr(args, "t_grid", None),
        "allow_m1": getattr(args, "allow_m1", None),
        "scale": getattr(args, "scale", None),
        "output": args.out,
        "format": args.format,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.command == "verify" and args.suite:
        data["checks"] = [s.strip() for s in args.suite.split(",") if s.strip()]
    try:
        from .theory import ModelParams

        data["params"] = ModelParams.from_dict(params)
        return ExperimentConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def _emit_table(table, cfg) -> int:
    from .harness.results import encode

    _emit(encode(table, cfg.format), cfg.output)
    return EXIT_OK if table.all_passed else EXIT_FAIL


def cmd_generate(cfg) -> int:
    from .generators import Digraph, generate, write_edge_list
    from .rng import make_stream

    p = cfg.params
    graph: Digraph = generate(p, make_stream(p.master_seed, cfg.stream_base))
    rho = p.rho
    if cfg.format == "json":
        edges = [[k, int(t)] for k in range(2, p.n + 1) for t in graph.out_edges(k)]
        doc = {"n": p.n, "m": p.m, "rho": None if math.isinf(rho) else rho, "variant": p.variant,
               "seed": p.master_seed, "root_loops": int(graph.root_loops), "edges": edges}
        _emit(json.dumps(doc, separators=(",", ":")) + "\n", cfg.output)
        return EXIT_OK
    if cfg.output:
        write_edge_list(graph, cfg.output, rho=rho, variant=p.variant, seed=p.master_seed)
    else:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "graph.tsv"
            write_edge_list(graph, path, rho=rho, variant=p.variant, seed=p.master_seed)
            sys.stdout.write(path.read_text(encoding="utf-8"))
    return EXIT_OK


def _check_m(cfg) -> None:
    if cfg.params.m == 1 and not cfg.allow_m1:
        raise UsageError("m = 1 is outside the limit theorem, which requires m >= 2; "
                         "pass --allow-m1 to run the tree drift check")


def cmd_descend(cfg) -> int:
    from .harness.experiments import run_distribution_experiment

    _check_m(cfg)
    if cfg.params.m == 1 and cfg.pipeline != "graph-bfs":
        cfg.pipeline = "graph-bfs"
    return _emit_table(run_distribution_experiment(cfg), cfg)


def cmd_sweep(cfg, n_grid) -> int:
    from .harness.experiments import run_sweep

    _check_m(cfg)
    if cfg.params.m == 1 and cfg.pipeline != "graph-bfs":
        cfg.pipeline = "graph-bfs"
    return _emit_table(run_sweep(cfg, n_grid), cfg)


def cmd_verify(cfg) -> int:
    from .harness.battery import resolve_checks, run_theory_battery

    try:
        resolve_checks(cfg.checks)
    except ValueError as exc:
        raise UsageError(str(exc))
    return _emit_table(run_theory_battery(cfg), cfg)


def cmd_yule(cfg, x: float) -> int:
    from .harness.results import ResultRow, ResultTable
    from .harness.stats import summarize, two_sample_ks
    from .rng import make_stream
    from .yule import expected_count, yule_batch

    m = cfg.params.m
    if m < 2:
        raise UsageError(f"Yule splits need m >= 2, got {m}")
    if not 0.0 < x <= 1.0:
        raise UsageError(f"--x must lie in (0, 1], got {x}")
    reps = cfg.replicates
    counts = yule_batch(m, x, reps, cfg.params.master_seed, cfg.stream_base).astype(float)
    s = summarize(counts)
    ref = expected_count(m, x)
    ok = None if s.stderr is None else abs(s.mean - ref) < 3 * s.stderr
    table = ResultTable()
    table.add(ResultRow(name="yule_mean", variant="yule", m=m, rho=0.0, n=0, replicates=reps,
                        estimate=s.mean, stderr=s.stderr, reference=ref,
                        provenance="Yule mean m/x^(m-1)", passed=ok))
    gam = make_stream(cfg.params.master_seed, 1 << 62).gammas(m / (m - 1), m - 1.0, max(reps, 10_000))
    table.add(ResultRow(name="yule_ks_gamma", variant="yule", m=m, rho=0.0, n=0, replicates=reps,
                        estimate=two_sample_ks(x ** (m - 1) * counts, gam)))
    for q, v in s.quantiles.items():
        table.add(ResultRow(name=f"quantile_{q:g}", variant="yule", m=m, rho=0.0, n=0,
                            replicates=reps, estimate=v))
    return _emit_table(table, cfg)


def cmd_report(path: str, fmt: str | None, out: str | None) -> int:
    from .harness.results import format_table, read_results

    try:
        table = read_results(path, fmt)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read results {path}: {exc}")
    _emit(format_table(table) + "\n", out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        apply_threads(resolve_threads(args.threads))
        if args.command == "report":
            return cmd_report(args.path, args.format, args.out)
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "descend":
            return cmd_descend(cfg)
        if args.command == "sweep":
            grid = args.n_grid or [10_000, 100_000, 1_000_000]
            if any(n < 2 for n in grid):
                raise UsageError("--n-grid sizes must be >= 2")
            return cmd_sweep(cfg, grid)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_yule(cfg, args.x)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"desclab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
