"""Command line entry point: ``cosplan generate|eval|ablate|report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .backends import make_backend
from .environments import BLOCKS, MAZE, SHUFFLE
from .harness import (
    SWEEPS,
    EvalAborted,
    ReportBundle,
    ablate,
    evaluate,
    format_table,
    parse_sweep_value,
    plot_curves,
    records_csv,
    summarize,
    table_csv,
)
from .prompts import METHODS, MethodConfig
from .task_forge import DatasetError, ForgeConfig, generate_dataset, read_dataset, write_dataset

log = logging.getLogger("cosplan")

DOMAINS = (MAZE, BLOCKS, SHUFFLE)


def _forge_config(args) -> ForgeConfig:
    cfg = ForgeConfig().with_overrides(
        n_options=args.n_options,
        k_reveal=args.k_reveal,
        context_len=args.context_len,
        in_context_ratio=args.in_context_ratio,
    )
    if args.error_free:
        cfg = cfg.with_overrides(error_free=True)
    if args.text_only:
        cfg = cfg.with_overrides(text_only=True)
    return cfg


def _check_ranges(cfg: ForgeConfig, domain: str, force: bool) -> bool:
    issues = cfg.range_issues()
    if cfg.text_only and domain == SHUFFLE:
        issues.append("shuffle has no text-only form")
    for msg in issues:
        if force:
            log.warning("%s (continuing because of --force)", msg)
        else:
            log.error("%s (pass --force to override)", msg)
    return force or not issues


def _backend(args):
    return make_backend(args.backend, endpoint=args.endpoint, model=args.model,
                        cache_dir=getattr(args, "cache_dir", None), max_parallel=args.parallel)


def cmd_generate(args) -> int:
    cfg = _forge_config(args)
    if not _check_ranges(cfg, args.domain, args.force):
        return 2
    instances = generate_dataset(args.domain, args.count, args.seed, cfg, args.workers)
    manifest = write_dataset(instances, args.out, args.seed, cfg, render=not args.no_images)
    print(f"wrote {manifest.count} {manifest.domain} instances to {args.out} "
          f"(avg context {manifest.avg_context_length:.2f}, avg remaining {manifest.avg_remaining_length:.2f})")
    return 0


def cmd_eval(args) -> int:
    try:
        manifest, instances = read_dataset(args.data)
    except (OSError, DatasetError) as exc:
        log.error("cannot read dataset: %s", exc)
        return 2
    method = MethodConfig(method=args.method, exclude_errors=args.exclude_errors)
    backend = _backend(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    try:
        records = evaluate(instances, args.task, backend, method, args.parallel)
    except EvalAborted as exc:
        log.error("backend gave up: %s; saving %d partial records", exc, len(exc.records))
        records, status = exc.records, 1
    (out / "records.csv").write_text(records_csv(records), encoding="utf-8")
    if not records:
        log.error("no instances had a %s question", args.task)
        return status or 2
    bundle = summarize(records, instances, manifest.domain, args.exclude_errors)
    bundle.save(out / "bundle.json")
    sys.stdout.write(format_table([bundle]))
    return status


def cmd_ablate(args) -> int:
    try:
        values = [parse_sweep_value(args.sweep, v) for v in args.values.split(",")]
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    base = _forge_config(args)
    if not _check_ranges(base, args.domain, args.force):
        return 2
    method = MethodConfig(method=args.method, exclude_errors=args.exclude_errors)
    try:
        bundles = ablate(args.domain, args.sweep, values, args.task, _backend(args), args.count, args.seed,
                         base, method, args.parallel, args.workers)
    except EvalAborted as exc:
        log.error("backend gave up: %s", exc)
        return 1
    out = Path(args.out)
    for b in bundles:
        b.save(out / f"{args.domain}_{args.task}_{args.sweep}={b.params[args.sweep]}.json")
    if bundles:
        (out / "curve.csv").write_text(table_csv(bundles), encoding="utf-8")
    sys.stdout.write(format_table(bundles))
    return 0


def _bundle_paths(paths: List[str]) -> List[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found.extend(sorted(q for q in p.rglob("*.json") if q.name != "manifest.json"))
        else:
            found.append(p)
    return found


def cmd_report(args) -> int:
    bundles = []
    for p in _bundle_paths(args.bundles):
        try:
            bundles.append(ReportBundle.load(p))
        except (OSError, ValueError, TypeError) as exc:
            log.warning("skipping %s: %s", p, exc)
    if not bundles:
        log.error("no bundles found")
        return 2
    bundles.sort(key=lambda b: (b.dataset, b.task, b.method, b.backend,
                                sorted((k, float(v)) for k, v in b.params.items())))
    sys.stdout.write(format_table(bundles))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(table_csv(bundles), encoding="utf-8")
        (out / "report.txt").write_text(format_table(bundles), encoding="utf-8")
        if args.plot:
            plot_curves(bundles, out / "curve.png")
    return 0


def _add_forge_flags(p):
    p.add_argument("--domain", choices=DOMAINS, required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--error-free", action="store_true")
    p.add_argument("--text-only", action="store_true")
    p.add_argument("--n-options", type=int)
    p.add_argument("--k-reveal", type=int)
    p.add_argument("--context-len", type=int)
    p.add_argument("--in-context-ratio", type=float)
    p.add_argument("--force", action="store_true", help="accept settings outside the benchmark ranges")
    p.add_argument("--workers", type=int, default=1, help="generation processes")


def _add_eval_flags(p):
    p.add_argument("--task", choices=("step", "error"), default="step")
    p.add_argument("--method", choices=METHODS, default="sgi")
    p.add_argument("--backend", default="oracle", help="oracle, random[:SEED] or remote")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--cache-dir", help="response cache for the remote backend")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--exclude-errors", action="store_true", help="drop errored instances from the denominator")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cosplan", description="Corrective sequential planning benchmark tools")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a dataset")
    _add_forge_flags(g)
    g.add_argument("--out", required=True)
    g.add_argument("--no-images", action="store_true")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="evaluate a backend on a dataset")
    e.add_argument("--data", required=True, help="dataset directory")
    _add_eval_flags(e)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="sweep one generation parameter")
    _add_forge_flags(a)
    _add_eval_flags(a)
    a.add_argument("--sweep", choices=SWEEPS, required=True)
    a.add_argument("--values", required=True, help="comma separated values")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="tabulate saved bundles")
    r.add_argument("bundles", nargs="+")
    r.add_argument("--out")
    r.add_argument("--plot", action="store_true")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
