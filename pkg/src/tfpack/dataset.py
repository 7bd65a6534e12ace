"""Sample ingestion, validation and the immutable :class:`Dataset`.

Samples live in UTF-8 JSONL, one object per line::

    {"id": "s0", "instruction": "...", "input": "", "output": "...",
     "token_length": 312, "group": "female", "label": 1,
     "embedding": [0.1, ...]}

Embeddings are either inline (``"embedding"`` key on every line) or stored
in a binary sidecar file (see :func:`write_embeddings` for the layout).
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConstraintError, InputError

SIDECAR_MAGIC = b"TFPE"
SIDECAR_VERSION = 1
# magic, u32 version, u64 rows, u32 dim -- little-endian, no padding
_SIDECAR_HEADER = struct.Struct("<4sIQI")


class EmbedSegment(str, enum.Enum):
    """Which part of a sample the embeddings were computed from."""

    INSTRUCTION = "instruction"
    OUTPUT = "output"
    FULL = "full"


@dataclass(frozen=True)
class Sample:
    id: str
    instruction: str
    input: str = ""
    output: str = ""
    token_length: int = 1
    group: str | None = None
    label: int | None = None

    def __post_init__(self):
        if not isinstance(self.token_length, int) or isinstance(self.token_length, bool):
            raise InputError(f"sample {self.id!r}: token_length must be an integer")
        if self.token_length < 1:
            raise InputError(f"sample {self.id!r}: token_length must be >= 1, got {self.token_length}")
        if not (self.instruction or self.input or self.output):
            raise InputError(f"sample {self.id!r}: instruction, input and output are all empty")
        if self.label is not None and self.label not in (0, 1):
            raise InputError(f"sample {self.id!r}: label must be 0 or 1, got {self.label!r}")

    def segment(self, which: EmbedSegment | str) -> str:
        """Text of the requested segment; ``full`` joins all three non-empty parts."""
        which = EmbedSegment(which)
        if which is EmbedSegment.INSTRUCTION:
            return self.instruction
        if which is EmbedSegment.OUTPUT:
            return self.output
        return "\n".join(p for p in (self.instruction, self.input, self.output) if p)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "token_length": self.token_length,
        }
        if self.group is not None:
            rec["group"] = self.group
        if self.label is not None:
            rec["label"] = self.label
        return rec


class Dataset:
    """Index-aligned samples and embedding rows.

    The embedding matrix is stored read-only; ``embeddings[i]`` belongs to
    ``samples[i]``. Instances are never mutated after construction and may be
    shared between threads.
    """

    __slots__ = ("samples", "embeddings", "embed_segment", "_index", "_checksum")

    def __init__(
        self,
        samples: Sequence[Sample],
        embeddings: np.ndarray,
        embed_segment: EmbedSegment | str = EmbedSegment.INSTRUCTION,
    ):
        samples = tuple(samples)
        emb = np.array(embeddings, copy=True)
        if emb.dtype not in (np.float32, np.float64):
            emb = emb.astype(np.float64)
        if emb.ndim != 2:
            raise InputError(f"embeddings must be a 2-d matrix, got shape {emb.shape}")
        if emb.shape[0] != len(samples):
            raise InputError(
                f"embedding row count {emb.shape[0]} does not match sample count {len(samples)}"
            )
        if emb.shape[1] < 1:
            raise InputError("embedding dimensionality must be >= 1")
        if not np.isfinite(emb).all():
            bad = int(np.flatnonzero(~np.isfinite(emb).all(axis=1))[0])
            raise InputError(f"sample {samples[bad].id!r}: embedding has non-finite entries")
        index: dict[str, int] = {}
        for i, s in enumerate(samples):
            if s.id in index:
                raise InputError(f"duplicate sample id {s.id!r}")
            index[s.id] = i
        emb.flags.writeable = False
        self.samples = samples
        self.embeddings = emb
        self.embed_segment = EmbedSegment(embed_segment)
        self._index = index
        self._checksum: str | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.samples == other.samples
            and self.embed_segment == other.embed_segment
            and self.embeddings.dtype == other.embeddings.dtype
            and np.array_equal(self.embeddings, other.embeddings)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim}, embed_segment={self.embed_segment.value!r})"

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def token_lengths(self) -> np.ndarray:
        return np.fromiter((s.token_length for s in self.samples), dtype=np.int64, count=len(self))

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise InputError(f"unknown sample id {sample_id!r}") from None

    def checksum(self) -> str:
        """SHA-256 over the canonical sample records and float64 embedding bytes."""
        if self._checksum is None:
            h = hashlib.sha256()
            h.update(f"tfpack-dataset/1 segment={self.embed_segment.value}\n".encode())
            for s in self.samples:
                h.update(json.dumps(s.to_record(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
                h.update(b"\n")
            h.update(np.ascontiguousarray(self.embeddings, dtype="<f8").tobytes())
            self._checksum = "sha256:" + h.hexdigest()
        return self._checksum


def _parse_sample(obj, line_no: int) -> tuple[Sample, object]:
    if not isinstance(obj, dict):
        raise InputError("expected a JSON object", line=line_no)
    for key in ("id", "token_length"):
        if key not in obj:
            raise InputError(f"missing required key {key!r}", line=line_no)
    sid = obj["id"]
    if not isinstance(sid, str) or not sid:
        raise InputError("id must be a non-empty string", line=line_no)
    texts = {}
    for key in ("instruction", "input", "output"):
        val = obj.get(key, "")
        if val is None:
            val = ""
        if not isinstance(val, str):
            raise InputError(f"{key} must be a string", line=line_no)
        texts[key] = val
    group = obj.get("group")
    if group is not None:
        if isinstance(group, bool) or not isinstance(group, (str, int)):
            raise InputError("group must be a string or integer", line=line_no)
        group = str(group)
    try:
        sample = Sample(
            id=sid,
            token_length=obj["token_length"],
            group=group,
            label=obj.get("label"),
            **texts,
        )
    except InputError as exc:
        raise InputError(str(exc), line=line_no) from None
    return sample, obj.get("embedding")


def read_samples(samples_path: str | Path) -> tuple[list[Sample], list[object]]:
    """Parse a samples JSONL file; returns samples and their raw inline embeddings.

    Blank lines are rejected rather than skipped so line numbers always
    equal dataset indices + 1.
    """
    samples: list[Sample] = []
    inline: list[object] = []
    seen: set[str] = set()
    path = Path(samples_path)
    if not path.is_file():
        raise InputError(f"samples file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise InputError("blank line", line=line_no)
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid JSON: {exc.msg}", line=line_no) from None
            sample, emb = _parse_sample(obj, line_no)
            if sample.id in seen:
                raise InputError(f"duplicate sample id {sample.id!r}", line=line_no)
            seen.add(sample.id)
            samples.append(sample)
            inline.append(emb)
    if not samples:
        raise InputError(f"samples file is empty: {path}")
    return samples, inline


def _inline_matrix(inline: list[object]) -> np.ndarray:
    dim = None
    rows = []
    for i, emb in enumerate(inline):
        line_no = i + 1
        if emb is None:
            raise InputError("missing embedding (no inline 'embedding' and no sidecar file)", line=line_no)
        if not isinstance(emb, list) or not emb:
            raise InputError("embedding must be a non-empty list of numbers", line=line_no)
        if dim is None:
            dim = len(emb)
        elif len(emb) != dim:
            raise InputError(f"embedding has dimensionality {len(emb)}, expected {dim}", line=line_no)
        try:
            row = [float(x) for x in emb]
        except (TypeError, ValueError):
            raise InputError("embedding entries must be numbers", line=line_no) from None
        if isinstance(emb[0], bool) or not all(math.isfinite(x) for x in row):
            raise InputError("embedding entries must be finite numbers", line=line_no)
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


def read_embeddings(path: str | Path) -> np.ndarray:
    """Read a binary sidecar file into an ``(rows, dim)`` float32 array."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"embeddings file not found: {path}")
    with path.open("rb") as fh:
        head = fh.read(_SIDECAR_HEADER.size)
        if len(head) < _SIDECAR_HEADER.size:
            raise InputError(f"{path}: truncated sidecar header")
        magic, version, rows, dim = _SIDECAR_HEADER.unpack(head)
        if magic != SIDECAR_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}, expected {SIDECAR_MAGIC!r}")
        if version != SIDECAR_VERSION:
            raise InputError(f"{path}: unsupported sidecar version {version}")
        if dim < 1:
            raise InputError(f"{path}: dimensionality must be >= 1")
        body = np.fromfile(fh, dtype="<f4")
    if body.size != rows * dim:
        raise InputError(f"{path}: expected {rows}x{dim} floats, found {body.size}")
    return body.reshape(rows, dim).astype(np.float32, copy=False)


def write_embeddings(path: str | Path, embeddings: np.ndarray) -> None:
    """Write ``embeddings`` as a sidecar file.

    Layout (little-endian): ``b"TFPE"``, u32 version (=1), u64 row count,
    u32 dim, then row-major float32 values.
    """
    emb = np.asarray(embeddings)
    if emb.ndim != 2:
        raise InputError("embeddings must be 2-d")
    rows, dim = emb.shape
    with Path(path).open("wb") as fh:
        fh.write(_SIDECAR_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, rows, dim))
        fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())


def load_dataset(
    samples_path: str | Path,
    embeddings_path: str | Path | None = None,
    embed_segment: EmbedSegment | str = EmbedSegment.INSTRUCTION,
) -> Dataset:
    """Load and validate a dataset.

    If ``embeddings_path`` is given, inline embeddings on the JSONL lines are
    ignored and the sidecar must have exactly one row per sample.
    """
    samples, inline = read_samples(samples_path)
    if embeddings_path is not None:
        emb = read_embeddings(embeddings_path)
        if emb.shape[0] != len(samples):
            raise InputError(
                f"sidecar has {emb.shape[0]} rows but samples file has {len(samples)} lines"
            )
        bad = np.flatnonzero(~np.isfinite(emb).all(axis=1))
        if bad.size:
            raise InputError("embedding has non-finite entries", line=int(bad[0]) + 1)
    else:
        emb = _inline_matrix(inline)
    return Dataset(samples, emb, embed_segment)


def save_dataset(
    dataset: Dataset,
    samples_path: str | Path,
    embeddings_path: str | Path | None = None,
) -> None:
    """Write ``dataset`` back out; embeddings go inline unless a sidecar path is given."""
    with Path(samples_path).open("w", encoding="utf-8", newline="\n") as fh:
        for i, s in enumerate(dataset.samples):
            rec = s.to_record()
            if embeddings_path is None:
                rec["embedding"] = [float(x) for x in dataset.embeddings[i]]
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    if embeddings_path is not None:
        write_embeddings(embeddings_path, dataset.embeddings)


def _hash_token(token: str, seed: int, dim: int) -> int:
    key = seed.to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % dim


# Stand-in token for samples whose selected segment is empty, so every row
# still has unit norm.
EMPTY_TOKEN = "\x00empty"


def toy_embed(
    samples: Iterable[Sample],
    dim: int,
    seed: int = 0,
    segment: EmbedSegment | str = EmbedSegment.INSTRUCTION,
) -> np.ndarray:
    """Deterministic bag-of-words feature hashing, for tests and demos only.

    Each whitespace-delimited lowercase token of the chosen segment adds 1 to
    bucket ``blake2b(token, key=seed) mod dim``; rows are then scaled to unit
    Euclidean norm. Not a substitute for a real embedding model.
    """
    if dim < 2:
        raise ConstraintError(f"toy embedding dim must be >= 2, got {dim}")
    samples = list(samples)
    texts = [s.segment(segment) for s in samples]
    if not texts or not any(t.split() for t in texts):
        raise ConstraintError(f"selected segment {EmbedSegment(segment).value!r} is empty for every sample")
    out = np.zeros((len(texts), dim), dtype=np.float64)
    cache: dict[str, int] = {}
    for i, text in enumerate(texts):
        tokens = text.lower().split() or [EMPTY_TOKEN]
        for tok in tokens:
            b = cache.get(tok)
            if b is None:
                b = cache[tok] = _hash_token(tok, seed, dim)
            out[i, b] += 1.0
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out
