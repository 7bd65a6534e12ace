"""Pack diagnostics: intra-pack distance, fill, padding and repetition."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import Dataset
from .errors import ConstraintError, InputError
from .fairness import strip_repeat_suffix
from .strategies import BATCH_KINDS, Manifest, StrategyKind, StrategySpec, run_strategy
from .tfp import Pack, RepetitionStats


def pack_mean_distances(dataset: Dataset, packs: Sequence[Pack]) -> list[tuple[float, int] | None]:
    """Per pack: (mean pairwise distance, number of pairs), or None for singletons."""
    emb = dataset.embeddings
    out = []
    for p in packs:
        idx = list(p.member_indices)
        if len(idx) < 2:
            out.append(None)
            continue
        d = pdist(np.asarray(emb[idx], dtype=np.float64))
        out.append((float(d.mean()), int(d.size)))
    return out


def intra_pack_distance(dataset: Dataset, packs: Sequence[Pack], pair_weighted: bool = False) -> float:
    """Average distance between members of the same pack.

    Each pack with two or more members contributes the mean Euclidean
    distance over its unordered member pairs; the result is the plain mean
    of those values. ``pair_weighted=True`` instead averages over every
    pair of every pack. Singleton packs are skipped.
    """
    per_pack = [v for v in pack_mean_distances(dataset, packs) if v is not None]
    if not per_pack:
        raise ConstraintError(
            f"intra-pack distance undefined: all {len(packs)} packs are singletons"
        )
    if pair_weighted:
        return float(sum(m * c for m, c in per_pack) / sum(c for _, c in per_pack))
    return float(np.mean([m for m, _ in per_pack]))


@dataclass
class PackReport:
    strategy: str
    avg_intra_pack_distance: float | None
    pack_count: int
    mean_pack_size: float
    fill_ratio: float | None
    singleton_packs: int
    fallback_count: int | None = None
    max_repetition: int | None = None
    padded_tokens: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(
    dataset: Dataset,
    strategy: str,
    packs: Sequence[Pack],
    pack_budget: int | None,
    fallback_count: int | None = None,
    repetition: RepetitionStats | None = None,
    pair_weighted: bool = False,
) -> PackReport:
    m = len(packs)
    if m == 0:
        raise ConstraintError("no packs to report on")
    singletons = sum(1 for p in packs if p.size < 2)
    avg = intra_pack_distance(dataset, packs, pair_weighted) if singletons < m else None
    fill = None
    batch = strategy in {k.value for k in BATCH_KINDS}
    if pack_budget is not None and not batch:
        fill = float(Fraction(sum(p.total_tokens for p in packs), m * pack_budget))
    padded = sum(p.padded_tokens or 0 for p in packs) if batch else None
    return PackReport(
        strategy=strategy,
        avg_intra_pack_distance=avg,
        pack_count=m,
        mean_pack_size=sum(p.size for p in packs) / m,
        fill_ratio=fill,
        singleton_packs=singletons,
        fallback_count=fallback_count,
        max_repetition=repetition.max if repetition is not None else None,
        padded_tokens=padded,
    )


def manifest_report(dataset: Dataset, manifest: Manifest, pair_weighted: bool = False) -> PackReport:
    spec = StrategySpec.from_dict(manifest.spec)
    return build_report(
        dataset,
        manifest.strategy,
        manifest.packs,
        spec.pack_budget if spec.kind not in BATCH_KINDS else None,
        fallback_count=manifest.summary.get("fallback_count"),
        repetition=manifest.repetition,
        pair_weighted=pair_weighted,
    )


def packs_from_records(dataset: Dataset, records: Sequence[dict]) -> list[Pack]:
    """Rebuild :class:`Pack` objects from manifest lines, resolving ids to indices."""
    packs = []
    for rec in records:
        idx = []
        for sid in rec["member_ids"]:
            try:
                idx.append(dataset.index_of(sid))
            except InputError:
                idx.append(dataset.index_of(strip_repeat_suffix(sid)))
        packs.append(
            Pack(
                pack_id=int(rec.get("pack_id", len(packs))),
                member_ids=tuple(rec["member_ids"]),
                total_tokens=int(rec.get("total_tokens", 0)),
                member_indices=tuple(idx),
                loss_weights=tuple(rec["loss_weights"]) if rec.get("loss_weights") is not None else None,
                flags=tuple(rec.get("flags", ())),
                padded_tokens=rec.get("padded_tokens"),
            )
        )
    return packs


def manifest_file_report(dataset: Dataset, header: dict, records: Sequence[dict], pair_weighted: bool = False) -> PackReport:
    """Report for a manifest read back from disk; the dataset checksum must match."""
    want = header.get("dataset", {}).get("checksum")
    if want != dataset.checksum():
        raise ConstraintError(
            f"manifest is bound to dataset {want}, but the loaded dataset is {dataset.checksum()}"
        )
    packs = packs_from_records(dataset, records)
    strategy = header["strategy"]
    kind = StrategyKind(strategy)
    rep = None
    if kind in (StrategyKind.KNN_PACKING, StrategyKind.TFP_RESAMPLING):
        rep = RepetitionStats.from_packs(packs, len(dataset))
    spec = StrategySpec.from_dict(header["spec"])
    return build_report(
        dataset,
        strategy,
        packs,
        spec.pack_budget if kind not in BATCH_KINDS else None,
        fallback_count=header.get("summary", {}).get("fallback_count"),
        repetition=rep,
        pair_weighted=pair_weighted,
    )


@dataclass
class Comparison:
    rows: list[PackReport]
    labels: list[str]
    deltas: list[dict]

    def to_dict(self) -> dict:
        return {
            "rows": [dict(label=l, **r.to_dict()) for l, r in zip(self.labels, self.rows)],
            "deltas": self.deltas,
        }

    def render(self) -> str:
        cols = [
            ("strategy", lambda l, r: l),
            ("avg_dist", lambda l, r: _fmt(r.avg_intra_pack_distance)),
            ("packs", lambda l, r: str(r.pack_count)),
            ("mean_k", lambda l, r: f"{r.mean_pack_size:.2f}"),
            ("fill", lambda l, r: _fmt(r.fill_ratio)),
            ("singletons", lambda l, r: str(r.singleton_packs)),
            ("fallbacks", lambda l, r: _fmt(r.fallback_count)),
            ("max_rep", lambda l, r: _fmt(r.max_repetition)),
            ("padded", lambda l, r: _fmt(r.padded_tokens)),
        ]
        table = [[name for name, _ in cols]]
        for l, r in zip(self.labels, self.rows):
            table.append([fn(l, r) for _, fn in cols])
        widths = [max(len(row[c]) for row in table) for c in range(len(cols))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def compare_strategies(
    dataset: Dataset, specs: Sequence[StrategySpec], pair_weighted: bool = False
) -> Comparison:
    """Run every spec on ``dataset`` and tabulate one report row per spec."""
    if not specs:
        raise ConstraintError("compare needs at least one strategy")
    rows, labels = [], []
    for spec in specs:
        manifest = run_strategy(dataset, spec)
        rows.append(manifest_report(dataset, manifest, pair_weighted))
        label = spec.kind.value
        if label in labels:
            label = f"{label}[{len(labels)}]"
        labels.append(label)
    deltas = []
    for (la, ra), (lb, rb) in combinations(zip(labels, rows), 2):
        d = {"a": la, "b": lb}
        for key in ("avg_intra_pack_distance", "fill_ratio", "mean_pack_size"):
            va, vb = getattr(ra, key), getattr(rb, key)
            d[key] = None if va is None or vb is None else vb - va
        deltas.append(d)
    return Comparison(rows, labels, deltas)
