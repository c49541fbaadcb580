"""Latent-space types and the scoring rules, free of any I/O.

A query is a pair of an object-class name and free natural-language text.
An object only receives a finite score when its detected class equals the
query class; the score is then the cosine between the object embedding and
the encoded query text. Each image is ranked by the best score among its
objects. Mismatched classes are *excluded* rather than assigned a stored
minus-infinity: the semantics are identical and exclusion is what lets the
index prune whole partitions.

All types here are immutable after construction and safe to share across
threads; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError, InvariantError

# Embedding width is configuration, not a constant of the method.
DEFAULT_DIM = 512

# Raw vectors with a norm below this are rejected: the cosine is undefined.
MIN_RAW_NORM = 1e-12

ClassLabel = str

BBox = tuple[int, int, int, int]  # (x, y, width, height) in pixels


class EmbeddingVector:
    """A unit-normalized latent-space coordinate.

    Normalization happens once, here, in float64; every similarity later on
    is then a plain dot product. Construction from any positive scaling of
    the same raw vector yields the same stored values (up to 1e-6 per
    component), and re-normalizing an already normalized vector is a no-op
    to within 1e-7 per component.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Sequence[float] | np.ndarray):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InputError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise InputError("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr))
        if norm < MIN_RAW_NORM:
            raise InputError(
                f"embedding norm {norm:g} is below {MIN_RAW_NORM:g}; "
                "cosine similarity is undefined for (near-)zero vectors"
            )
        arr = arr / norm
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        """Read-only float64 array of unit norm."""
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash(self._values.tobytes())


def validate_class_label(name: str) -> str:
    if not isinstance(name, str) or not name.strip():
        raise InputError("class label must be a non-empty string")
    return name


@dataclass(frozen=True)
class Query:
    """An object-class indicator plus free natural-language text.

    ``class_label`` may be None only for full-image queries, where no class
    gate applies.
    """

    class_label: Optional[ClassLabel]
    text: str

    def __post_init__(self) -> None:
        if self.class_label is not None:
            validate_class_label(self.class_label)
        if not isinstance(self.text, str) or not self.text.strip():
            raise InputError("query text must be non-empty after trimming whitespace")


@dataclass(frozen=True)
class ObjectRecord:
    """One detected instance: its provenance, class, and embedding.

    The crop itself is referenced by (image_id, object_index), not stored.
    """

    image_id: str
    object_index: int
    class_label: ClassLabel
    bbox: BBox
    confidence: Optional[float]
    embedding: EmbeddingVector

    def __post_init__(self) -> None:
        validate_class_label(self.class_label)
        if self.object_index < 0:
            raise InputError("object_index must be nonnegative")
        x, y, w, h = self.bbox
        if x < 0 or y < 0:
            raise InputError("bbox origin must be nonnegative")
        if w < 1 or h < 1:
            raise InputError("bbox width and height must be >= 1")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InputError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    """One dataset image: identity, provenance, and object count."""

    image_id: str
    source_uri: str
    content_hash: bytes  # 32-byte digest of the image bytes
    object_count: int
    full_image_embedding: Optional[EmbeddingVector] = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise InputError("image_id must be non-empty")
        if len(self.content_hash) != 32:
            raise InputError("content_hash must be a 256-bit digest (32 bytes)")
        if self.object_count < 0:
            raise InputError("object_count must be nonnegative")


@dataclass(frozen=True)
class ScoredObject:
    """A single object's finite alignment with a query."""

    image_id: str
    object_index: int
    score: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise InvariantError("object scores must be finite; exclusion stands in for -inf")


@dataclass(frozen=True)
class RankedResult:
    """An image's aggregated score plus the object that achieved it.

    ``best_object_index`` is None for full-image rankings, which have no
    per-object provenance.
    """

    image_id: str
    score: float
    best_object_index: Optional[int] = None


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of two embeddings, clamped to [-1, 1].

    Inputs are unit vectors, so this is their dot product. The same
    summation routine runs regardless of argument order, which makes the
    result exactly symmetric.
    """
    if a.dim != b.dim:
        raise InvariantError(f"dimension mismatch: {a.dim} vs {b.dim}")
    s = float(np.dot(a.values, b.values))
    return min(1.0, max(-1.0, s))


def score_object(
    q_embedding: EmbeddingVector, q_class: ClassLabel, obj: ObjectRecord
) -> Optional[ScoredObject]:
    """Class-gated object score. Returns None when the class gate excludes.

    None is the semantic minus-infinity: excluded objects never reach
    aggregation and excluded images never appear in results.
    """
    if obj.class_label != q_class:
        return None
    s = cosine_similarity(obj.embedding, q_embedding)
    return ScoredObject(obj.image_id, obj.object_index, s)


def aggregate_image(scored: Iterable[ScoredObject]) -> Optional[RankedResult]:
    """Max over one image's object scores; ties go to the smallest index.

    Returns None for an empty collection (every object excluded), which
    drops the image from the ranking entirely.
    """
    best: Optional[ScoredObject] = None
    image_id: Optional[str] = None
    for s in scored:
        if image_id is None:
            image_id = s.image_id
        elif s.image_id != image_id:
            raise InvariantError(
                f"aggregate_image saw mixed image ids: {image_id!r} and {s.image_id!r}"
            )
        if (
            best is None
            or s.score > best.score
            or (s.score == best.score and s.object_index < best.object_index)
        ):
            best = s
    if best is None:
        return None
    return RankedResult(best.image_id, best.score, best.object_index)


def rank(results: Iterable[RankedResult], k: int) -> list[RankedResult]:
    """Top-k by score descending; ties broken by image_id ascending.

    The (score desc, image_id asc) key is a total order, so output is
    deterministic for any input order.
    """
    if k < 0:
        raise InputError("k must be nonnegative")
    ordered = sorted(results, key=lambda r: (-r.score, r.image_id))
    return ordered[:k]
