"""Threshold Filtering Packing: path construction and segmentation into packs.

The path is a greedy nearest-neighbour tour over the embedding space where
each step must keep a distance strictly greater than ``threshold_t`` from the
last ``recent_r`` path entries. The finished path is then cut left to right
into packs bounded by ``max_pack_tokens``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import Dataset
from .errors import ConstraintError, InputError

# Above this many bytes the recent-window distance rows are recomputed on
# demand instead of cached.
RING_CACHE_BYTES = 512 * 1024 * 1024

OVERSIZE = "oversize"


@dataclass(frozen=True)
class TfpConfig:
    threshold_t: float
    recent_r: int = 4
    start_index: int = 0
    max_pack_tokens: int = 4096

    def __post_init__(self):
        if not np.isfinite(self.threshold_t) or self.threshold_t < 0:
            raise ConstraintError(f"threshold_t must be a finite value >= 0, got {self.threshold_t}")
        if int(self.recent_r) != self.recent_r or self.recent_r < 0:
            raise ConstraintError(f"recent_r must be an integer >= 0, got {self.recent_r}")
        if int(self.start_index) != self.start_index or self.start_index < 0:
            raise ConstraintError(f"start_index must be an integer >= 0, got {self.start_index}")
        if int(self.max_pack_tokens) != self.max_pack_tokens or self.max_pack_tokens < 1:
            raise ConstraintError(f"max_pack_tokens must be an integer >= 1, got {self.max_pack_tokens}")

    def to_dict(self) -> dict:
        return {
            "threshold_t": float(self.threshold_t),
            "recent_r": int(self.recent_r),
            "start_index": int(self.start_index),
            "max_pack_tokens": int(self.max_pack_tokens),
        }


@dataclass(frozen=True)
class PathOrder:
    indices: tuple[int, ...]
    fallback_positions: frozenset[int] = frozenset()

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Pack:
    pack_id: int
    member_ids: tuple[str, ...]
    total_tokens: int
    member_indices: tuple[int, ...] = field(default=(), compare=False)
    loss_weights: tuple[float, ...] | None = None
    flags: tuple[str, ...] = ()
    padded_tokens: int | None = None

    @property
    def size(self) -> int:
        return len(self.member_ids)

    def to_record(self) -> dict:
        rec = {
            "pack_id": self.pack_id,
            "member_ids": list(self.member_ids),
            "total_tokens": self.total_tokens,
        }
        if self.loss_weights is not None:
            rec["loss_weights"] = list(self.loss_weights)
        if self.padded_tokens is not None:
            rec["padded_tokens"] = self.padded_tokens
        rec["flags"] = list(self.flags)
        return rec


class Weighting(str, enum.Enum):
    NONE = "none"
    EQUAL_PER_SEQUENCE = "equal_per_sequence"


def select_next(
    embeddings,
    visited,
    current: int,
    recent: Sequence[int],
    t: float,
) -> tuple[int, bool]:
    """Pick the next path node.

    Returns ``(index, fallback)``. The index is the unvisited row nearest to
    ``current`` among rows whose distance to every index in ``recent`` is
    strictly greater than ``t``; when none qualifies, the unconstrained
    nearest unvisited row is returned with ``fallback=True``. Equal
    distances resolve to the lowest index. ``t <= 0`` disables the filter.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    visited = np.asarray(visited, dtype=bool)
    if visited.shape != (emb.shape[0],):
        raise InputError("visited mask must have one entry per embedding row")
    cand = np.flatnonzero(~visited)
    if cand.size == 0:
        raise ConstraintError("select_next: every index is already visited")

    def dists(src: int) -> np.ndarray:
        diff = emb[cand] - emb[src]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    d_cur = dists(current)
    # cand is ascending, so the first argmin is the lowest index among ties
    nearest = int(cand[np.argmin(d_cur)])
    if t <= 0 or len(recent) == 0:
        return nearest, False
    ok = np.ones(cand.size, dtype=bool)
    for j in recent:
        ok &= dists(int(j)) > t
    if not ok.any():
        return nearest, True
    masked = np.where(ok, d_cur, np.inf)
    return int(cand[np.argmin(masked)]), False


def build_tfp_path(dataset: Dataset | np.ndarray, config: TfpConfig) -> PathOrder:
    """Visit every sample once, starting at ``config.start_index``.

    With ``recent_r == 0`` or ``threshold_t == 0`` this is exactly the greedy
    nearest-neighbour tour.
    """
    emb = dataset.embeddings if isinstance(dataset, Dataset) else np.asarray(dataset)
    n = emb.shape[0]
    if n == 0:
        raise ConstraintError("cannot build a path over an empty dataset")
    if config.start_index >= n:
        raise ConstraintError(f"start_index {config.start_index} out of range for {n} samples")
    if emb.dtype not in (np.float32, np.float64):
        emb = emb.astype(np.float64)
    r = min(int(config.recent_r), n)
    use_ring = r * n * 8 <= RING_CACHE_BYTES
    path, fallback = _kernels.tfp_path(
        np.ascontiguousarray(emb), int(config.start_index), float(config.threshold_t), r, use_ring
    )
    return PathOrder(
        indices=tuple(int(i) for i in path),
        fallback_positions=frozenset(int(p) for p in np.flatnonzero(fallback)),
    )


def fill_packs(
    indices: Sequence[int],
    ids: Sequence[str],
    lengths: Sequence[int],
    max_pack_tokens: int,
    first_pack_id: int = 0,
) -> list[Pack]:
    """Greedy left-to-right fill of an ordered sample sequence.

    ``ids`` and ``lengths`` are parallel to ``indices`` (ids may carry a
    repetition suffix). A sample longer than the budget becomes a singleton
    pack flagged ``oversize``.
    """
    if max_pack_tokens < 1:
        raise ConstraintError(f"max_pack_tokens must be >= 1, got {max_pack_tokens}")
    packs: list[Pack] = []
    cur_idx: list[int] = []
    cur_ids: list[str] = []
    cur_tokens = 0

    def flush():
        nonlocal cur_idx, cur_ids, cur_tokens
        if cur_idx:
            packs.append(Pack(first_pack_id + len(packs), tuple(cur_ids), cur_tokens, tuple(cur_idx)))
        cur_idx, cur_ids, cur_tokens = [], [], 0

    for idx, sid, length in zip(indices, ids, lengths):
        length = int(length)
        if length > max_pack_tokens:
            flush()
            packs.append(
                Pack(first_pack_id + len(packs), (sid,), length, (int(idx),), flags=(OVERSIZE,))
            )
            continue
        if cur_tokens + length > max_pack_tokens:
            flush()
        cur_idx.append(int(idx))
        cur_ids.append(sid)
        cur_tokens += length
    flush()
    return packs


def equal_sequence_weights(packs: list[Pack]) -> list[Pack]:
    """Give every member of pack i the weight (N / m) / k_i.

    N is the total number of members, m the number of packs and k_i the size
    of pack i, so each pack's weights sum to the mean pack size and the mean
    weight over all members is 1.
    """
    m = len(packs)
    total = sum(p.size for p in packs)
    return [replace(p, loss_weights=(total / (m * p.size),) * p.size) for p in packs]


def _check_permutation(order: Sequence[int], n: int) -> None:
    arr = np.asarray(order, dtype=np.int64)
    if arr.shape != (n,) or not np.array_equal(np.sort(arr), np.arange(n)):
        raise InputError(f"order is not a permutation of 0..{n - 1}")


def segment_into_packs(
    dataset: Dataset,
    order: PathOrder | Sequence[int],
    max_pack_tokens: int,
    weighting: Weighting | str = Weighting.NONE,
) -> list[Pack]:
    """Cut an ordering of the dataset into token-bounded, disjoint packs."""
    indices = order.indices if isinstance(order, PathOrder) else tuple(int(i) for i in order)
    _check_permutation(indices, len(dataset))
    samples = dataset.samples
    packs = fill_packs(
        indices,
        [samples[i].id for i in indices],
        [samples[i].token_length for i in indices],
        max_pack_tokens,
    )
    if Weighting(weighting) is Weighting.EQUAL_PER_SEQUENCE:
        packs = equal_sequence_weights(packs)
    return packs


@dataclass(frozen=True)
class RepetitionStats:
    """How many times each sample (by dataset index) occurs across all packs."""

    counts: tuple[int, ...]

    @classmethod
    def from_packs(cls, packs: Sequence[Pack], n: int) -> "RepetitionStats":
        counts = np.zeros(n, dtype=np.int64)
        for p in packs:
            np.add.at(counts, np.asarray(p.member_indices, dtype=np.int64), 1)
        return cls(tuple(int(c) for c in counts))

    @property
    def max(self) -> int:
        return max(self.counts) if self.counts else 0

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self, ids: Sequence[str] | None = None, top: int = 10) -> dict:
        order = sorted(range(len(self.counts)), key=lambda i: (-self.counts[i], i))[:top]
        return {
            "max_repetition": self.max,
            "total_memberships": self.total,
            "repeated_samples": sum(1 for c in self.counts if c > 1),
            "top": [
                {"id": ids[i] if ids is not None else i, "packs": self.counts[i]} for i in order
            ],
        }
