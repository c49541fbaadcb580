"""Query orchestration: encode once, dispatch to the right search, tag the run.

Separates "what the user asked" (a class gate plus free text) from "how the
store answers it". The text is encoded exactly once per call no matter how
many partitions or images are involved, so encoder cost never scales with
corpus size.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol

from .core import EmbeddingVector, Query, RankedResult
from .errors import InputError, QueryError
from .index import Index

MODE_OBJECT = "object_level"
MODE_FULL_IMAGE = "full_image"
MODES = (MODE_OBJECT, MODE_FULL_IMAGE)

_FINGERPRINT_TAG = b"objsearch.query.v1"


class TextEncoder(Protocol):
    def encode_text(self, text: str) -> EmbeddingVector: ...


@dataclass(frozen=True)
class SearchOutcome:
    """Ranked images plus bookkeeping for one executed query.

    ``exhausted`` is True when the store held fewer qualifying images than
    were requested, e.g. a top-20 request over a class with 7 images.
    ``query_id`` is a stable fingerprint of (mode, class, text): re-running
    the same query yields the same id, so judgments and cached rankings
    collected under it stay attached.
    """

    results: tuple[RankedResult, ...]
    exhausted: bool
    query_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "results", tuple(self.results))


def query_fingerprint(query: Query, mode: str = MODE_OBJECT) -> str:
    """Deterministic 64-bit hex id for a (mode, class, text) triple."""
    h = hashlib.sha256()
    h.update(_FINGERPRINT_TAG)
    for part in (mode, query.class_label or "", query.text):
        h.update(b"\x00")
        h.update(part.encode("utf-8"))
    return h.hexdigest()[:16]


def run_query(
    index: Index,
    encoder: TextEncoder,
    query: Query,
    k: int = 10,
    *,
    mode: str = MODE_OBJECT,
    min_confidence: float = 0.0,
) -> SearchOutcome:
    """Execute one retrieval query against an index.

    Object-level mode requires a class label and ranks images by their best
    matching object of that class. Full-image mode ignores any class label
    and ranks by whole-image embeddings.
    """
    if mode not in MODES:
        raise InputError(f"unknown search mode {mode!r}; expected one of {MODES}")
    if mode == MODE_OBJECT and query.class_label is None:
        raise QueryError(
            "object-level queries require a class label",
            valid_classes=sorted(index.class_set),
        )
    q_vec = encoder.encode_text(query.text)
    if mode == MODE_OBJECT:
        results = index.search_topk_images(
            query.class_label, q_vec, k, min_confidence=min_confidence
        )
    else:
        results = index.search_topk_full_images(q_vec, k)
    return SearchOutcome(
        results=tuple(results),
        exhausted=len(results) < k,
        query_id=query_fingerprint(query, mode),
    )
