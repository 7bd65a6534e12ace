"""Packing strategies behind one interface, and the manifest they produce."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from . import __version__
from .dataset import Dataset
from .errors import ConstraintError, InputError
from .fairness import tfp_balanced, tfp_resampling
from .tfp import (
    OVERSIZE,
    Pack,
    RepetitionStats,
    TfpConfig,
    Weighting,
    build_tfp_path,
    fill_packs,
    segment_into_packs,
)

MANIFEST_FORMAT = "tfpack-manifest"
MANIFEST_VERSION = 1


class StrategyKind(str, enum.Enum):
    VANILLA_PADDING = "vanilla_padding"
    SORTED_BATCHING = "sorted_batching"
    RANDOM_PACKING = "random_packing"
    RANDOM_PACKING_MASKED = "random_packing_masked"
    PACKING_LOSS_WEIGHTED = "packing_loss_weighted"
    KNN_PACKING = "knn_packing"
    TFP = "tfp"
    TFP_BALANCED = "tfp_balanced"
    TFP_RESAMPLING = "tfp_resampling"


BATCH_KINDS = {StrategyKind.VANILLA_PADDING, StrategyKind.SORTED_BATCHING}
TFP_KINDS = {StrategyKind.TFP, StrategyKind.TFP_BALANCED, StrategyKind.TFP_RESAMPLING}
# strategies whose packs partition the dataset (each sample exactly once)
PARTITION_KINDS = set(StrategyKind) - {StrategyKind.KNN_PACKING, StrategyKind.TFP_RESAMPLING}


@dataclass(frozen=True)
class StrategySpec:
    """What to run. Kind-specific fields must be set exactly when the kind uses them:

    * ``tfp`` for the three TFP kinds (its ``max_pack_tokens`` is the budget)
    * ``batch_size`` for vanilla_padding / sorted_batching
    * ``max_pack_tokens`` for random packing variants and knn_packing
    * ``k`` for knn_packing
    """

    kind: StrategyKind | str
    seed: int = 0
    k: int | None = None
    tfp: TfpConfig | None = None
    max_pack_tokens: int | None = None
    batch_size: int | None = None
    descending: bool = True
    group_key: str = "group"
    limit_overlap: bool = False

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)

        def need(name, required):
            present = getattr(self, name) is not None
            if required and not present:
                raise ConstraintError(f"strategy {kind.value} requires {name}")
            if present and not required:
                raise ConstraintError(f"strategy {kind.value} does not take {name}")

        need("tfp", kind in TFP_KINDS)
        need("batch_size", kind in BATCH_KINDS)
        need("k", kind is StrategyKind.KNN_PACKING)
        need("max_pack_tokens", kind not in TFP_KINDS | BATCH_KINDS)
        if self.k is not None and self.k < 1:
            raise ConstraintError(f"k must be >= 1, got {self.k}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConstraintError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_pack_tokens is not None and self.max_pack_tokens < 1:
            raise ConstraintError(f"max_pack_tokens must be >= 1, got {self.max_pack_tokens}")
        if self.limit_overlap and kind is not StrategyKind.KNN_PACKING:
            raise ConstraintError("limit_overlap applies to knn_packing only")

    @property
    def pack_budget(self) -> int | None:
        if self.tfp is not None:
            return self.tfp.max_pack_tokens
        return self.max_pack_tokens

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value, "seed": self.seed}
        if self.tfp is not None:
            d["tfp"] = self.tfp.to_dict()
        for name in ("k", "max_pack_tokens", "batch_size"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.kind is StrategyKind.SORTED_BATCHING:
            d["descending"] = self.descending
        if self.kind in (StrategyKind.TFP_BALANCED, StrategyKind.TFP_RESAMPLING):
            d["group_key"] = self.group_key
        if self.kind is StrategyKind.KNN_PACKING:
            d["limit_overlap"] = self.limit_overlap
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategySpec":
        d = dict(d)
        if "tfp" in d:
            d["tfp"] = TfpConfig(**d["tfp"])
        return cls(**d)


@dataclass
class Manifest:
    strategy: str
    spec: dict
    packs: list[Pack]
    summary: dict
    dataset_checksum: str
    dataset_size: int
    mask_boundaries: bool = False
    repetition: RepetitionStats | None = None
    fallback_positions: tuple[int, ...] = ()
    run: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "tool_version": __version__,
            "strategy": self.strategy,
            "mask_boundaries": self.mask_boundaries,
            "spec": self.spec,
            "run": self.run,
            "dataset": {"checksum": self.dataset_checksum, "size": self.dataset_size},
            "summary": self.summary,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), ensure_ascii=False)]
        lines.extend(json.dumps(p.to_record(), ensure_ascii=False) for p in self.packs)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())


def read_manifest(path: str | Path) -> tuple[dict, list[dict]]:
    """Return the header and raw pack records of a manifest file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise InputError(f"empty manifest: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise InputError(f"{path} is not a {MANIFEST_FORMAT} file", line=1)
    packs = []
    for line_no, raw in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON: {exc.msg}", line=line_no) from None
        if not isinstance(rec, dict) or "member_ids" not in rec:
            raise InputError("pack record without member_ids", line=line_no)
        packs.append(rec)
    return header, packs


def random_packing(dataset: Dataset, seed: int, max_pack_tokens: int) -> list[Pack]:
    """Seeded uniform shuffle, then greedy fill."""
    if len(dataset) < 1:
        raise ConstraintError("random packing needs at least one sample")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return segment_into_packs(dataset, perm.tolist(), max_pack_tokens)


def _batches(dataset: Dataset, order: list[int], batch_size: int) -> list[Pack]:
    if batch_size < 1:
        raise ConstraintError(f"batch_size must be >= 1, got {batch_size}")
    s = dataset.samples
    packs = []
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        lengths = [s[i].token_length for i in idx]
        longest = max(lengths)
        packs.append(
            Pack(
                pack_id=b,
                member_ids=tuple(s[i].id for i in idx),
                total_tokens=sum(lengths),
                member_indices=tuple(idx),
                padded_tokens=sum(longest - x for x in lengths),
            )
        )
    return packs


def sorted_batching(dataset: Dataset, batch_size: int, descending: bool = True) -> list[Pack]:
    """Padding groups of similar length.

    Samples are ordered by token length (descending by default, ties by
    index) and cut into consecutive batches of ``batch_size``. Batches are
    not concatenated, so ``total_tokens`` may exceed any pack budget;
    ``padded_tokens`` is the sum of (longest in batch - length).
    """
    lengths = dataset.token_lengths
    idx = np.arange(len(dataset))
    key = -lengths if descending else lengths
    order = np.lexsort((idx, key)).tolist()
    return _batches(dataset, order, batch_size)


def vanilla_padding(dataset: Dataset, batch_size: int) -> list[Pack]:
    """Batches in dataset order, each padded to its longest member."""
    return _batches(dataset, list(range(len(dataset))), batch_size)


def _neighbour_rows(emb: np.ndarray, rows: np.ndarray) -> np.ndarray:
    return cdist(emb[rows], emb, metric="euclidean")


def knn_packing(
    dataset: Dataset,
    k: int,
    max_pack_tokens: int,
    limit_overlap: bool = False,
    block: int = 256,
) -> tuple[list[Pack], RepetitionStats]:
    """Each sample together with its ``k`` nearest neighbours.

    Groups are formed in dataset index order with the anchor first and
    neighbours by ascending distance (ties by lowest index). Neighbours may
    recur across groups; the returned stats count how often. Groups over the
    token budget are split by greedy fill.

    ``limit_overlap=True`` is the no-reuse variant: anchors already placed
    are skipped and neighbours are taken only from unplaced samples. The
    resulting groups are laid end to end and filled to the budget like any
    other packing order, so the result partitions the dataset.
    """
    n = len(dataset)
    if k < 1:
        raise ConstraintError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ConstraintError(f"k must be smaller than the number of samples ({n}), got {k}")
    emb = np.asarray(dataset.embeddings, dtype=np.float64)
    s = dataset.samples
    groups: list[list[int]] = []
    if not limit_overlap:
        for b0 in range(0, n, block):
            rows = np.arange(b0, min(b0 + block, n))
            D = _neighbour_rows(emb, rows)
            D[np.arange(rows.size), rows] = np.inf
            for r, anchor in enumerate(rows):
                nbrs = np.argsort(D[r], kind="stable")[:k]
                groups.append([int(anchor)] + nbrs.tolist())
    else:
        placed = np.zeros(n, dtype=bool)
        for anchor in range(n):
            if placed[anchor]:
                continue
            placed[anchor] = True
            d = _neighbour_rows(emb, np.array([anchor]))[0]
            d[placed] = np.inf
            free = int((~placed).sum())
            nbrs = np.argsort(d, kind="stable")[: min(k, free)]
            placed[nbrs] = True
            groups.append([anchor] + nbrs.tolist())
        order = [i for g in groups for i in g]
        packs = segment_into_packs(dataset, order, max_pack_tokens)
        return packs, RepetitionStats.from_packs(packs, n)
    packs: list[Pack] = []
    for g in groups:
        packs.extend(
            fill_packs(g, [s[i].id for i in g], [s[i].token_length for i in g], max_pack_tokens, len(packs))
        )
    return packs, RepetitionStats.from_packs(packs, n)


def _summary(dataset: Dataset, spec: StrategySpec, packs: list[Pack]) -> dict:
    members = sum(p.size for p in packs)
    total = sum(p.total_tokens for p in packs)
    out: dict[str, Any] = {
        "pack_count": len(packs),
        "sample_count": len(dataset),
        "member_count": members,
        "total_tokens": total,
        "oversize_packs": sum(1 for p in packs if OVERSIZE in p.flags),
    }
    budget = spec.pack_budget
    if budget is not None and packs:
        out["fill_ratio"] = total / (len(packs) * budget)
    if spec.kind in BATCH_KINDS:
        out["padded_tokens"] = sum(p.padded_tokens or 0 for p in packs)
    return out


def run_strategy(dataset: Dataset, spec: StrategySpec) -> Manifest:
    """Dispatch ``spec`` and wrap the packs with config echo and summary stats."""
    kind = spec.kind
    repetition = None
    fallbacks: tuple[int, ...] = ()
    if kind is StrategyKind.TFP:
        order = build_tfp_path(dataset, spec.tfp)
        packs = segment_into_packs(dataset, order, spec.tfp.max_pack_tokens)
        fallbacks = tuple(sorted(order.fallback_positions))
    elif kind is StrategyKind.TFP_BALANCED:
        packs = tfp_balanced(dataset, spec.tfp, spec.group_key)
    elif kind is StrategyKind.TFP_RESAMPLING:
        packs, repetition = tfp_resampling(dataset, spec.tfp, spec.group_key, spec.seed)
    elif kind in (StrategyKind.RANDOM_PACKING, StrategyKind.RANDOM_PACKING_MASKED):
        packs = random_packing(dataset, spec.seed, spec.max_pack_tokens)
    elif kind is StrategyKind.PACKING_LOSS_WEIGHTED:
        perm = np.random.default_rng(spec.seed).permutation(len(dataset)).tolist()
        packs = segment_into_packs(dataset, perm, spec.max_pack_tokens, Weighting.EQUAL_PER_SEQUENCE)
    elif kind is StrategyKind.KNN_PACKING:
        packs, repetition = knn_packing(dataset, spec.k, spec.max_pack_tokens, spec.limit_overlap)
    elif kind is StrategyKind.SORTED_BATCHING:
        packs = sorted_batching(dataset, spec.batch_size, spec.descending)
    elif kind is StrategyKind.VANILLA_PADDING:
        packs = vanilla_padding(dataset, spec.batch_size)
    else:  # pragma: no cover - enum is exhaustive
        raise ConstraintError(f"unknown strategy {kind}")

    summary = _summary(dataset, spec, packs)
    if kind is StrategyKind.TFP:
        summary["fallback_count"] = len(fallbacks)
    if repetition is not None:
        summary["max_repetition"] = repetition.max
    return Manifest(
        strategy=kind.value,
        spec=spec.to_dict(),
        packs=packs,
        summary=summary,
        dataset_checksum=dataset.checksum(),
        dataset_size=len(dataset),
        mask_boundaries=kind is StrategyKind.RANDOM_PACKING_MASKED,
        repetition=repetition,
        fallback_positions=fallbacks,
    )
