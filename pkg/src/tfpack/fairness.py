"""Group-fairness metrics and sensitive-attribute-aware TFP variants.

Metrics follow the usual binary setting: prediction ``f``, label ``Y`` and
sensitive attribute ``A`` all in {0, 1}.

* demographic parity difference: |P(f=1 | A=1) - P(f=1 | A=0)|
* equalized odds difference: max(m_tp, m_fp) where
  m_tp = |P(f=1 | Y=1, A=0) - P(f=1 | Y=1, A=1)| and
  m_fp = |P(f=1 | Y=0, A=0) - P(f=1 | Y=0, A=1)|
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConstraintError, InputError
from .tfp import Pack, RepetitionStats, TfpConfig, build_tfp_path, fill_packs

REPEAT_SUFFIX = "#rep"


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    prediction: int
    label: int
    group: int

    def __post_init__(self):
        for name in ("prediction", "label", "group"):
            v = getattr(self, name)
            if isinstance(v, bool) or v not in (0, 1):
                raise InputError(f"record {self.id!r}: {name} must be 0 or 1, got {v!r}")


@dataclass(frozen=True)
class FairnessReport:
    dpd: float
    eod: float
    m_tp: float
    m_fp: float
    group_counts: dict

    def to_dict(self) -> dict:
        return {
            "dpd": self.dpd,
            "eod": self.eod,
            "m_tp": self.m_tp,
            "m_fp": self.m_fp,
            "group_counts": self.group_counts,
        }


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"predictions file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise InputError("blank line", line=line_no)
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid JSON: {exc.msg}", line=line_no) from None
            if not isinstance(obj, dict):
                raise InputError("expected a JSON object", line=line_no)
            missing = [k for k in ("id", "prediction", "label", "group") if k not in obj]
            if missing:
                raise InputError(f"missing keys {missing}", line=line_no)
            try:
                records.append(
                    PredictionRecord(str(obj["id"]), obj["prediction"], obj["label"], obj["group"])
                )
            except InputError as exc:
                raise InputError(str(exc), line=line_no) from None
    if not records:
        raise InputError(f"predictions file is empty: {path}")
    return records


def _arrays(records: Sequence[PredictionRecord]):
    f = np.fromiter((r.prediction for r in records), dtype=np.int64, count=len(records))
    y = np.fromiter((r.label for r in records), dtype=np.int64, count=len(records))
    a = np.fromiter((r.group for r in records), dtype=np.int64, count=len(records))
    return f, y, a


def _rate(f: np.ndarray, mask: np.ndarray, what: str) -> float:
    n = int(mask.sum())
    if n == 0:
        raise ConstraintError(f"empty cell {what}: no records")
    return int(f[mask].sum()) / n


def demographic_parity_difference(records: Sequence[PredictionRecord]) -> float:
    f, _, a = _arrays(records)
    return abs(_rate(f, a == 1, "A=1") - _rate(f, a == 0, "A=0"))


def equalized_odds_difference(records: Sequence[PredictionRecord]) -> FairnessReport:
    """Full report; requires all four (group, label) cells to be non-empty."""
    f, y, a = _arrays(records)
    counts = {f"A={g},Y={l}": int(((a == g) & (y == l)).sum()) for g in (0, 1) for l in (0, 1)}
    for cell, c in counts.items():
        if c == 0:
            raise ConstraintError(f"empty cell {cell}: no records")
    rate = {
        (g, l): _rate(f, (a == g) & (y == l), f"A={g},Y={l}") for g in (0, 1) for l in (0, 1)
    }
    m_tp = abs(rate[0, 1] - rate[1, 1])
    m_fp = abs(rate[0, 0] - rate[1, 0])
    return FairnessReport(
        dpd=demographic_parity_difference(records),
        eod=max(m_tp, m_fp),
        m_tp=m_tp,
        m_fp=m_fp,
        group_counts=counts,
    )


fairness_report = equalized_odds_difference


def group_paths(dataset: Dataset, config: TfpConfig, group_key: str = "group"):
    """One TFP path per group value, larger group first.

    Returns ``[(value, [dataset indices in path order]), ...]`` with exactly
    two entries. Equal-size groups are ordered by first appearance in the
    dataset. Each group's path starts at ``config.start_index`` when that
    sample belongs to the group, otherwise at the group's first member.
    """
    members: dict[str, list[int]] = {}
    for i, s in enumerate(dataset.samples):
        v = getattr(s, group_key, None)
        if v is None:
            raise InputError(f"sample {s.id!r} has no {group_key!r} attribute")
        members.setdefault(v, []).append(i)
    if len(members) != 2:
        raise ConstraintError(
            f"balanced packing needs exactly two {group_key!r} values, found {len(members)}: "
            f"{sorted(members)}"
        )
    ordered = sorted(members.items(), key=lambda kv: (-len(kv[1]), kv[1][0]))
    out = []
    for value, idx in ordered:
        idx_arr = np.asarray(idx)
        local_start = idx.index(config.start_index) if config.start_index in idx else 0
        sub_cfg = TfpConfig(config.threshold_t, config.recent_r, local_start, config.max_pack_tokens)
        sub = build_tfp_path(dataset.embeddings[idx_arr], sub_cfg)
        out.append((value, [int(idx_arr[k]) for k in sub.indices]))
    return out


def balanced_order(dataset: Dataset, config: TfpConfig, group_key: str = "group") -> tuple[list[int], int]:
    """Interleave the two group paths; returns (order, exhaustion position).

    The exhaustion position is the length of the strictly alternating prefix;
    everything after it comes from the larger group alone.
    """
    (_, major), (_, minor) = group_paths(dataset, config, group_key)
    order: list[int] = []
    for k in range(len(minor)):
        order.append(major[k])
        order.append(minor[k])
    cut = len(order)
    if len(major) > len(minor):
        # the next majority sample still alternates with the last minority one
        cut += 1
    order.extend(major[len(minor):])
    return order, cut


def tfp_balanced(dataset: Dataset, config: TfpConfig, group_key: str = "group") -> list[Pack]:
    """Alternate the two groups' TFP paths, then cut into packs.

    Every sample appears exactly once. Once the smaller group runs out, the
    remaining samples of the larger group follow in their path order.
    """
    order, _ = balanced_order(dataset, config, group_key)
    s = dataset.samples
    return fill_packs(order, [s[i].id for i in order], [s[i].token_length for i in order], config.max_pack_tokens)


def tfp_resampling(
    dataset: Dataset, config: TfpConfig, group_key: str = "group", seed: int = 0
) -> tuple[list[Pack], RepetitionStats]:
    """Like :func:`tfp_balanced` but the smaller group is reused to keep alternating.

    After the smaller group's path is exhausted, its samples are drawn again
    by cycling through that path from a seeded starting offset, so every
    larger-group sample is followed by a smaller-group one. A reused sample's
    id is written as ``<id>#rep<k>`` for its k-th reuse.
    """
    (_, major), (_, minor) = group_paths(dataset, config, group_key)
    offset = int(np.random.default_rng(seed).integers(len(minor)))
    order: list[int] = []
    for k in range(len(major)):
        order.append(major[k])
        if k < len(minor):
            order.append(minor[k])
        else:
            order.append(minor[(offset + k - len(minor)) % len(minor)])
    seen: dict[int, int] = {}
    ids = []
    for i in order:
        c = seen.get(i, 0)
        seen[i] = c + 1
        sid = dataset.samples[i].id
        ids.append(sid if c == 0 else f"{sid}{REPEAT_SUFFIX}{c}")
    lengths = [dataset.samples[i].token_length for i in order]
    packs = fill_packs(order, ids, lengths, config.max_pack_tokens)
    return packs, RepetitionStats.from_packs(packs, len(dataset))


def strip_repeat_suffix(sample_id: str) -> str:
    head, sep, tail = sample_id.rpartition(REPEAT_SUFFIX)
    if sep and head and tail.isdigit():
        return head
    return sample_id
