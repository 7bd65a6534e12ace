"""Command-line entry point: ``tfpack {pack,calibrate,stats,compare,fairness}``.

Exit codes: 0 success, 1 unexpected failure, 2 malformed input (files,
fields, flags), 3 constraint violation (e.g. k >= n, empty fairness cell).
Failures print one line to stderr: ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import Dataset, EmbedSegment, load_dataset, read_samples, toy_embed
from .errors import ConstraintError, InputError, TfpError
from .fairness import equalized_odds_difference, load_predictions
from .geometry import DEFAULT_EXACT_LIMIT, DEFAULT_PERCENT, calibrate_threshold, pairwise_stats
from .packstats import compare_strategies, manifest_file_report
from .strategies import (
    BATCH_KINDS,
    TFP_KINDS,
    StrategyKind,
    StrategySpec,
    read_manifest,
    run_strategy,
)
from .tfp import TfpConfig

log = logging.getLogger("tfpack")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_CONSTRAINT = 3

DEFAULT_R = 4
DEFAULT_MAX_PACK_TOKENS = 4096
DEFAULT_K = 5
DEFAULT_BATCH_SIZE = 8

ALIASES = {
    "tfp": StrategyKind.TFP,
    "balanced": StrategyKind.TFP_BALANCED,
    "resampling": StrategyKind.TFP_RESAMPLING,
    "knn": StrategyKind.KNN_PACKING,
    "random": StrategyKind.RANDOM_PACKING,
    "random_masked": StrategyKind.RANDOM_PACKING_MASKED,
    "loss_weighted": StrategyKind.PACKING_LOSS_WEIGHTED,
    "sorted": StrategyKind.SORTED_BATCHING,
    "vanilla": StrategyKind.VANILLA_PADDING,
}

# flags that make up a pack run's effective configuration, in echo order
RUN_KEYS = (
    "samples", "embeddings", "embed_segment", "toy_embed_dim", "toy_seed",
    "strategy", "seed", "threshold_percent", "threshold_value", "r",
    "max_pack_tokens", "start_index", "k", "limit_overlap", "batch_size",
    "ascending", "group_key", "pair_cap", "exact_limit",
)


def parse_strategy(name: str) -> StrategyKind:
    key = name.strip().lower().replace("-", "_")
    if key in ALIASES:
        return ALIASES[key]
    try:
        return StrategyKind(key)
    except ValueError:
        choices = sorted(set(ALIASES) | {k.value for k in StrategyKind})
        raise argparse.ArgumentTypeError(f"unknown strategy {name!r}; choose from {', '.join(choices)}")


def _add_dataset_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--samples", required=required, help="samples JSONL (one object per line)")
    g.add_argument("--embeddings", help="binary sidecar embedding file; otherwise inline 'embedding' keys are used")
    g.add_argument(
        "--embed-segment",
        choices=[s.value for s in EmbedSegment],
        default=EmbedSegment.INSTRUCTION.value,
        help="segment the embeddings were computed from (instruction-only embeddings "
        "from a base model are the recommended choice; default: instruction)",
    )
    g.add_argument(
        "--toy-embed-dim",
        type=int,
        help="ignore stored embeddings and use deterministic feature hashing of the "
        "selected segment with this many buckets (testing/demo only)",
    )
    g.add_argument("--toy-seed", type=int, default=0, help="seed for --toy-embed-dim (default 0)")


def _add_calibration_args(g) -> None:
    g.add_argument("--pair-cap", type=int, help="pairs sampled when the dataset exceeds --exact-limit")
    g.add_argument(
        "--exact-limit",
        type=int,
        default=DEFAULT_EXACT_LIMIT,
        help=f"largest n for exact all-pairs statistics (default {DEFAULT_EXACT_LIMIT})",
    )


def _add_strategy_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("strategy parameters")
    g.add_argument("--seed", type=int, default=0, help="seed for randomized strategies and pair sampling")
    g.add_argument(
        "--threshold-percent",
        type=float,
        default=DEFAULT_PERCENT,
        help="TFP threshold as a percentile of all pairwise distances (default 2.0)",
    )
    g.add_argument("--threshold-value", type=float, help="explicit TFP threshold; overrides --threshold-percent")
    g.add_argument("--r", type=int, default=DEFAULT_R, help=f"recent-window size (default {DEFAULT_R})")
    g.add_argument(
        "--max-pack-tokens",
        type=int,
        default=DEFAULT_MAX_PACK_TOKENS,
        help=f"token budget per pack (default {DEFAULT_MAX_PACK_TOKENS})",
    )
    g.add_argument("--start-index", type=int, default=0, help="first node of the TFP path (default 0)")
    g.add_argument("--k", type=int, default=DEFAULT_K, help=f"neighbours per knn pack (default {DEFAULT_K})")
    g.add_argument("--limit-overlap", action="store_true", help="knn: never reuse a sample")
    g.add_argument(
        "--batch-size",
        type=int,
        default=DEFAULT_BATCH_SIZE,
        help=f"samples per batch for vanilla/sorted (default {DEFAULT_BATCH_SIZE})",
    )
    g.add_argument("--ascending", action="store_true", help="sorted batching: shortest first")
    g.add_argument("--group-key", default="group", help="sensitive attribute for balanced/resampling")
    _add_calibration_args(g)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfpack",
        description="Threshold Filtering Packing and baseline packing strategies for SFT data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pack", help="pack a dataset and write a manifest")
    _add_dataset_args(p, required=False)
    p.add_argument("--strategy", type=parse_strategy, default=StrategyKind.TFP)
    _add_strategy_args(p)
    p.add_argument("--out", required=True, help="manifest JSONL to write")
    p.add_argument(
        "--config-from",
        metavar="MANIFEST",
        help="re-run with the configuration embedded in an existing manifest; other flags are ignored",
    )
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("calibrate", help="pairwise-distance statistics and the TFP threshold")
    _add_dataset_args(p)
    p.add_argument("--percent", type=float, default=DEFAULT_PERCENT, help="percentile (default 2.0)")
    p.add_argument("--seed", type=int, default=0)
    _add_calibration_args(p)
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("stats", help="diagnostics for an existing manifest")
    _add_dataset_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair-weighted", action="store_true", help="average over pairs instead of packs")
    p.add_argument("--json", dest="json_out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare", help="run several strategies and tabulate diagnostics")
    _add_dataset_args(p)
    p.add_argument(
        "--strategies",
        default="tfp,random_packing,knn_packing",
        help="comma-separated strategy names (default: tfp,random_packing,knn_packing)",
    )
    _add_strategy_args(p)
    p.add_argument("--pair-weighted", action="store_true")
    p.add_argument("--json", dest="json_out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fairness", help="dpd / eod from a predictions JSONL")
    p.add_argument("--predictions", required=True, help='JSONL with keys "id", "prediction", "label", "group"')
    p.add_argument("--out", help="report JSON to write")
    p.set_defaults(func=cmd_fairness)
    return parser


def _load(args) -> Dataset:
    t0 = time.perf_counter()
    if args.toy_embed_dim is not None:
        samples, _ = read_samples(args.samples)
        emb = toy_embed(samples, args.toy_embed_dim, args.toy_seed, args.embed_segment)
        ds = Dataset(samples, emb, args.embed_segment)
    else:
        ds = load_dataset(args.samples, args.embeddings, args.embed_segment)
    log.info("loaded %d samples, dim %d (%.2fs)", len(ds), ds.dim, time.perf_counter() - t0)
    return ds


def _dataset_echo(args) -> dict:
    return {
        "samples": args.samples,
        "embeddings": args.embeddings,
        "embed_segment": args.embed_segment,
        "toy_embed_dim": args.toy_embed_dim,
        "toy_seed": args.toy_seed,
    }


def _threshold(ds: Dataset, args) -> tuple[float, dict]:
    if args.threshold_value is not None:
        if args.threshold_value < 0:
            raise ConstraintError(f"--threshold-value must be >= 0, got {args.threshold_value}")
        return float(args.threshold_value), {"source": "value", "value": float(args.threshold_value)}
    t0 = time.perf_counter()
    stats = pairwise_stats(ds, args.pair_cap, args.seed, args.exact_limit)
    t = calibrate_threshold(stats, args.threshold_percent)
    log.info("threshold %.6g at %s%% over %d pairs (%.2fs)", t, args.threshold_percent, stats.evaluated, time.perf_counter() - t0)
    return t, {
        "source": "percent",
        "percent": args.threshold_percent,
        "value": t,
        "mode": stats.mode,
        "pairs_evaluated": stats.evaluated,
    }


def _spec(kind: StrategyKind, args, t: float | None) -> StrategySpec:
    if kind in TFP_KINDS:
        cfg = TfpConfig(t, args.r, args.start_index, args.max_pack_tokens)
        return StrategySpec(kind, seed=args.seed, tfp=cfg, group_key=args.group_key)
    if kind in BATCH_KINDS:
        return StrategySpec(kind, seed=args.seed, batch_size=args.batch_size, descending=not args.ascending)
    if kind is StrategyKind.KNN_PACKING:
        return StrategySpec(
            kind, seed=args.seed, k=args.k, max_pack_tokens=args.max_pack_tokens, limit_overlap=args.limit_overlap
        )
    return StrategySpec(kind, seed=args.seed, max_pack_tokens=args.max_pack_tokens)


def _write_json(path: str | Path, obj) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _run_pack(args) -> int:
    ds = _load(args)
    kind = args.strategy
    t, threshold = (None, None)
    if kind in TFP_KINDS:
        t, threshold = _threshold(ds, args)
    spec = _spec(kind, args, t)
    t0 = time.perf_counter()
    manifest = run_strategy(ds, spec)
    log.info("%s: %d packs (%.2fs)", kind.value, len(manifest.packs), time.perf_counter() - t0)
    effective = {key: getattr(args, key) for key in RUN_KEYS}
    effective["strategy"] = kind.value
    manifest.run = {"args": effective, "threshold": threshold}
    manifest.write(args.out)
    if manifest.repetition is not None:
        rep = manifest.repetition
        side = {
            "format": "tfpack-repetition",
            "version": 1,
            "strategy": kind.value,
            "dataset": {"checksum": ds.checksum(), "size": len(ds)},
            **rep.to_dict(ds.ids),
            "counts": dict(zip(ds.ids, rep.counts)),
        }
        _write_json(repetition_path(args.out), side)
    print(json.dumps({"manifest": str(args.out), **manifest.summary}))
    return EXIT_OK


def repetition_path(manifest_path: str | Path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.name + ".repetition.json")


def cmd_pack(args) -> int:
    if args.config_from is None:
        if args.samples is None:
            raise InputError("pack needs --samples (or --config-from MANIFEST)")
        return _run_pack(args)
    header, _ = read_manifest(args.config_from)
    try:
        saved = header["run"]["args"]
        ns = argparse.Namespace(**{key: saved[key] for key in RUN_KEYS})
        ns.strategy = parse_strategy(saved["strategy"])
    except (KeyError, TypeError, argparse.ArgumentTypeError):
        raise InputError(f"{args.config_from} has no usable embedded run configuration") from None
    ns.out = args.out
    return _run_pack(ns)


def cmd_calibrate(args) -> int:
    ds = _load(args)
    stats = pairwise_stats(ds, args.pair_cap, args.seed, args.exact_limit)
    t = calibrate_threshold(stats, args.percent)
    report = {
        "config": {
            **_dataset_echo(args),
            "percent": args.percent,
            "seed": args.seed,
            "pair_cap": args.pair_cap,
            "exact_limit": args.exact_limit,
        },
        "dataset": {"checksum": ds.checksum(), "size": len(ds)},
        "threshold": t,
        **stats.summary(),
    }
    print(f"threshold  {t:.10g}  (percent={args.percent})")
    print(f"pairs      {stats.count}  evaluated={stats.evaluated}  mode={stats.mode}")
    print(f"distance   min={stats.min:.10g}  mean={stats.mean:.10g}  max={stats.max:.10g}")
    if args.json_out:
        _write_json(args.json_out, report)
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = _load(args)
    header, records = read_manifest(args.manifest)
    report = manifest_file_report(ds, header, records, args.pair_weighted)
    out = {
        "config": {**_dataset_echo(args), "manifest": args.manifest, "pair_weighted": args.pair_weighted},
        "dataset": {"checksum": ds.checksum(), "size": len(ds)},
        "report": report.to_dict(),
    }
    for key, val in report.to_dict().items():
        print(f"{key:24s} {val}")
    if args.json_out:
        _write_json(args.json_out, out)
    return EXIT_OK


def cmd_compare(args) -> int:
    ds = _load(args)
    try:
        kinds = [parse_strategy(s) for s in args.strategies.split(",") if s.strip()]
    except argparse.ArgumentTypeError as exc:
        raise InputError(str(exc)) from None
    t, threshold = (None, None)
    if any(k in TFP_KINDS for k in kinds):
        t, threshold = _threshold(ds, args)
    specs = [_spec(k, args, t) for k in kinds]
    table = compare_strategies(ds, specs, args.pair_weighted)
    print(table.render())
    if args.json_out:
        effective = {key: getattr(args, key) for key in RUN_KEYS if key != "strategy"}
        effective["strategies"] = [k.value for k in kinds]
        _write_json(
            args.json_out,
            {
                "config": effective,
                "threshold": threshold,
                "dataset": {"checksum": ds.checksum(), "size": len(ds)},
                **table.to_dict(),
            },
        )
    return EXIT_OK


def cmd_fairness(args) -> int:
    records = load_predictions(args.predictions)
    report = equalized_odds_difference(records)
    digest = hashlib.sha256(Path(args.predictions).read_bytes()).hexdigest()
    out = {
        "config": {"predictions": args.predictions},
        "dataset": {"checksum": f"sha256:{digest}", "size": len(records)},
        **report.to_dict(),
    }
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        _write_json(args.out, out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConstraintError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except OSError as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TfpError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
