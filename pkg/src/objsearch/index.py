"""Class-partitioned object-embedding store with exact top-k cosine search.

Embeddings live in one densely packed float32 matrix per object class, so a
query only ever scans the single partition its class gate implies; other
partitions are never touched. Per-image aggregation rides on the fact that
each image's rows form one contiguous block within a partition (ingestion
is atomic per image), so a running-max reduction over block boundaries
yields every image's best object in one pass.

The scan is exact, not approximate: the stated aim is a sensible runtime,
and exactness keeps every downstream check an equality test. An ANN
structure can layer on later without changing this module's contract.

Incremental ingestion is keyed by content hash, not by image id, so a
renamed file is still recognized as already indexed. Images whose hash is
known are skipped wholesale.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._kernels import score_rows
from .checksum import crc64
from .core import (
    BBox,
    ClassLabel,
    EmbeddingVector,
    ImageRecord,
    ObjectRecord,
    RankedResult,
    ScoredObject,
)
from .encoder import EncoderDescriptor
from .errors import (
    CapabilityError,
    ConfigurationError,
    CorruptionError,
    FormatError,
    InputError,
    QueryError,
)

FORMAT_VERSION = 1
_PARTITION_MAGIC = b"SOLP"
_PARTITION_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, version, dim, row_count

_MANIFEST_FILE = "manifest.json"
_IMAGES_FILE = "images.json"
_FULL_FILE = "full_images.bin"


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class IngestReport:
    added_images: int = 0
    skipped_duplicates: int = 0
    added_objects: int = 0
    warnings: list[str] = field(default_factory=list)

    def merge(self, other: "IngestReport") -> None:
        self.added_images += other.added_images
        self.skipped_duplicates += other.skipped_duplicates
        self.added_objects += other.added_objects
        self.warnings.extend(other.warnings)


@dataclass
class IndexStats:
    classes: dict[str, int]
    image_count: int
    object_count: int
    dim: int
    encoder_id: str
    full_image_count: int


@dataclass
class ScanStats:
    """Instrumentation: how many rows searches actually visited."""

    queries: int = 0
    rows_visited_total: int = 0
    last_rows_visited: int = 0


@dataclass
class _ImageEntry:
    source_uri: str
    content_hash: bytes
    object_count: int
    full_row: Optional[int]  # row in the full-image store, if any


class _RowBlock:
    """Growable row-major float32 matrix plus parallel per-row metadata."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self._rows = np.empty((0, dim), dtype=np.float32)
        self._object_index = np.empty(0, dtype=np.uint32)
        self._bbox = np.empty((0, 4), dtype=np.uint32)
        self._confidence = np.empty(0, dtype=np.float32)
        self.image_ids: list[str] = []
        self.run_starts: list[int] = []
        self.run_image_ids: list[str] = []
        self._starts_cache: Optional[np.ndarray] = None
        self._lookup_cache: Optional[dict[tuple[str, int], int]] = None

    @property
    def rows(self) -> np.ndarray:
        return self._rows[: self.count]

    @property
    def object_index(self) -> np.ndarray:
        return self._object_index[: self.count]

    @property
    def bbox(self) -> np.ndarray:
        return self._bbox[: self.count]

    @property
    def confidence(self) -> np.ndarray:
        return self._confidence[: self.count]

    def reserve(self, extra: int) -> None:
        need = self.count + extra
        cap = self._rows.shape[0]
        if need <= cap:
            return
        new_cap = max(need, cap * 2, 64)
        for name, shape in (
            ("_rows", (new_cap, self.dim)),
            ("_object_index", (new_cap,)),
            ("_bbox", (new_cap, 4)),
            ("_confidence", (new_cap,)),
        ):
            old = getattr(self, name)
            grown = np.empty(shape, dtype=old.dtype)
            grown[: self.count] = old[: self.count]
            setattr(self, name, grown)

    def append_image_block(
        self,
        image_id: str,
        rows: np.ndarray,
        object_indices: Sequence[int],
        bboxes: Sequence[BBox],
        confidences: Sequence[Optional[float]],
    ) -> None:
        m = rows.shape[0]
        self.reserve(m)
        lo, hi = self.count, self.count + m
        self._rows[lo:hi] = rows
        self._object_index[lo:hi] = np.asarray(object_indices, dtype=np.uint32)
        self._bbox[lo:hi] = np.asarray(bboxes, dtype=np.uint32).reshape(m, 4)
        self._confidence[lo:hi] = np.asarray(
            [np.nan if c is None else c for c in confidences], dtype=np.float32
        )
        self.image_ids.extend([image_id] * m)
        self.run_starts.append(lo)
        self.run_image_ids.append(image_id)
        self.count = hi
        self._starts_cache = None
        self._lookup_cache = None

    def starts_array(self) -> np.ndarray:
        if self._starts_cache is None:
            self._starts_cache = np.asarray(self.run_starts, dtype=np.intp)
        return self._starts_cache

    def lookup(self) -> dict[tuple[str, int], int]:
        if self._lookup_cache is None:
            self._lookup_cache = {
                (self.image_ids[i], int(self._object_index[i])): i for i in range(self.count)
            }
        return self._lookup_cache


@dataclass
class _Snapshot:
    """A coherent view of one partition, safe to scan without the lock."""

    rows: np.ndarray
    count: int
    image_ids: list[str]
    object_index: np.ndarray
    bbox: np.ndarray
    confidence: np.ndarray
    starts: np.ndarray
    run_image_ids: list[str]


class Index:
    """The persistent object-embedding store plus its search operations.

    Thread model: many concurrent readers, one writer. Ingestion holds the
    writer lock for its duration; searches take the lock only to snapshot
    partition views, then scan lock-free. Readers always observe either
    the pre- or the post-ingest state of an image, never part of one.
    """

    def __init__(self, encoder: EncoderDescriptor, class_set: Sequence[ClassLabel]):
        labels = list(class_set)
        if len(set(labels)) != len(labels):
            raise ConfigurationError("class set contains duplicates")
        for c in labels:
            if not c or not c.strip():
                raise ConfigurationError("class labels must be non-empty")
        self._encoder = encoder
        self._class_set = labels
        self._partitions: dict[str, _RowBlock] = {c: _RowBlock(encoder.dim) for c in labels}
        self._full = _RowBlock(encoder.dim)
        self._images: dict[str, _ImageEntry] = {}
        self._hashes: set[bytes] = set()
        self._created = _utcnow()
        self._modified = self._created
        self._lock = threading.RLock()
        self.scan_stats = ScanStats()

    # -- basic accessors ----------------------------------------------------

    @property
    def encoder(self) -> EncoderDescriptor:
        return self._encoder

    @property
    def dim(self) -> int:
        return self._encoder.dim

    @property
    def class_set(self) -> list[ClassLabel]:
        return list(self._class_set)

    @property
    def image_count(self) -> int:
        return len(self._images)

    @property
    def object_count(self) -> int:
        return sum(p.count for p in self._partitions.values())

    def has_content_hash(self, digest: bytes) -> bool:
        with self._lock:
            return digest in self._hashes

    def has_image(self, image_id: str) -> bool:
        with self._lock:
            return image_id in self._images

    def image_ids(self) -> list[str]:
        with self._lock:
            return list(self._images)

    def image_record(self, image_id: str) -> Optional[ImageRecord]:
        with self._lock:
            entry = self._images.get(image_id)
            if entry is None:
                return None
            emb = None
            if entry.full_row is not None:
                emb = EmbeddingVector(self._full.rows[entry.full_row].astype(np.float64))
            return ImageRecord(
                image_id=image_id,
                source_uri=entry.source_uri,
                content_hash=entry.content_hash,
                object_count=entry.object_count,
                full_image_embedding=emb,
            )

    def object_info(
        self, image_id: str, object_index: int
    ) -> Optional[tuple[ClassLabel, BBox, Optional[float]]]:
        """Class, bbox, and confidence of one stored object, if present."""
        with self._lock:
            for label, part in self._partitions.items():
                row = part.lookup().get((image_id, object_index))
                if row is not None:
                    conf = float(part.confidence[row])
                    return (
                        label,
                        tuple(int(v) for v in part.bbox[row]),
                        None if np.isnan(conf) else conf,
                    )
        return None

    def stats(self) -> IndexStats:
        with self._lock:
            return IndexStats(
                classes={c: self._partitions[c].count for c in self._class_set},
                image_count=len(self._images),
                object_count=self.object_count,
                dim=self.dim,
                encoder_id=self._encoder.encoder_id,
                full_image_count=self._full.count,
            )

    # -- ingestion -----------------------------------------------------------

    def ingest(
        self, items: Iterable[tuple[ImageRecord, Sequence[ObjectRecord]]]
    ) -> IngestReport:
        """Append a stream of images with their object records.

        Images whose content hash is already present are skipped entirely.
        Objects with a class outside the configured set are rejected with a
        warning; everything else about the image is kept. Appending is
        atomic per image: row data is written first and the visible counts
        are bumped last, so a failure mid-image leaves no trace.
        """
        report = IngestReport()
        with self._lock:
            for image, objects in items:
                self._ingest_one(image, list(objects), report)
            if report.added_images:
                self._modified = _utcnow()
        return report

    def _ingest_one(
        self, image: ImageRecord, objects: list[ObjectRecord], report: IngestReport
    ) -> None:
        for obj in objects:
            if obj.embedding.dim != self.dim:
                raise ConfigurationError(
                    f"object {obj.image_id}/{obj.object_index} has dim "
                    f"{obj.embedding.dim}, index expects {self.dim}"
                )
        if image.full_image_embedding is not None and image.full_image_embedding.dim != self.dim:
            raise ConfigurationError(
                f"full-image embedding of {image.image_id} has dim "
                f"{image.full_image_embedding.dim}, index expects {self.dim}"
            )

        if image.content_hash in self._hashes:
            report.skipped_duplicates += 1
            return
        if image.image_id in self._images:
            report.warnings.append(
                f"image id {image.image_id!r} already present with different content; skipped"
            )
            return

        accepted: list[ObjectRecord] = []
        seen: set[int] = set()
        for obj in sorted(objects, key=lambda o: o.object_index):
            if obj.image_id != image.image_id:
                report.warnings.append(
                    f"object {obj.image_id}/{obj.object_index} does not belong to "
                    f"image {image.image_id}; rejected"
                )
                continue
            if obj.object_index in seen:
                report.warnings.append(
                    f"duplicate object index {obj.object_index} in image "
                    f"{image.image_id}; rejected"
                )
                continue
            if obj.class_label not in self._partitions:
                report.warnings.append(
                    f"unknown class {obj.class_label!r} on {image.image_id}/"
                    f"{obj.object_index}; rejected"
                )
                continue
            seen.add(obj.object_index)
            accepted.append(obj)
        if image.object_count != len(objects):
            report.warnings.append(
                f"image {image.image_id} declared {image.object_count} objects "
                f"but {len(objects)} were provided"
            )

        by_class: dict[str, list[ObjectRecord]] = {}
        for obj in accepted:
            by_class.setdefault(obj.class_label, []).append(obj)

        # Reserve first: allocation is the only step that can fail, and it
        # must fail before anything becomes visible.
        for label, group in by_class.items():
            self._partitions[label].reserve(len(group))
        if image.full_image_embedding is not None:
            self._full.reserve(1)

        for label, group in by_class.items():
            rows = np.stack([o.embedding.values for o in group]).astype(np.float32)
            self._partitions[label].append_image_block(
                image.image_id,
                rows,
                [o.object_index for o in group],
                [o.bbox for o in group],
                [o.confidence for o in group],
            )
        full_row: Optional[int] = None
        if image.full_image_embedding is not None:
            full_row = self._full.count
            self._full.append_image_block(
                image.image_id,
                image.full_image_embedding.values.astype(np.float32).reshape(1, -1),
                [0],
                [(0, 0, 1, 1)],
                [None],
            )
        self._images[image.image_id] = _ImageEntry(
            source_uri=image.source_uri,
            content_hash=image.content_hash,
            object_count=len(accepted),
            full_row=full_row,
        )
        self._hashes.add(image.content_hash)
        report.added_images += 1
        report.added_objects += len(accepted)

    # -- search --------------------------------------------------------------

    def _snapshot(self, block: _RowBlock) -> _Snapshot:
        with self._lock:
            count = block.count
            n_runs = len(block.run_starts)
            return _Snapshot(
                rows=block._rows,
                count=count,
                image_ids=block.image_ids[:count] if len(block.image_ids) != count else block.image_ids,
                object_index=block._object_index,
                bbox=block._bbox,
                confidence=block._confidence,
                starts=block.starts_array()[:n_runs],
                run_image_ids=block.run_image_ids[:n_runs]
                if len(block.run_image_ids) != n_runs
                else block.run_image_ids,
            )

    def _require_partition(self, class_label: ClassLabel) -> _RowBlock:
        part = self._partitions.get(class_label)
        if part is None:
            valid = sorted(self._class_set)
            raise QueryError(
                f"unknown object class {class_label!r}; valid classes: {', '.join(valid)}",
                valid_classes=valid,
            )
        return part

    def _check_query(self, q: EmbeddingVector, k: int) -> None:
        if q.dim != self.dim:
            raise ConfigurationError(f"query dim {q.dim} does not match index dim {self.dim}")
        if k < 0:
            raise InputError("k must be nonnegative")

    def _note_scan(self, rows: int) -> None:
        with self._lock:
            self.scan_stats.queries += 1
            self.scan_stats.rows_visited_total += rows
            self.scan_stats.last_rows_visited = rows

    @staticmethod
    def _confidence_mask(conf: np.ndarray, min_confidence: float) -> Optional[np.ndarray]:
        if min_confidence <= 0.0:
            return None
        # Records without a stored confidence are never filtered out:
        # unknown is not the same as low.
        return np.isnan(conf) | (conf >= np.float32(min_confidence))

    def search_topk_objects(
        self,
        class_label: ClassLabel,
        q: EmbeddingVector,
        k: int,
        *,
        min_confidence: float = 0.0,
    ) -> list[ScoredObject]:
        """Exact top-k objects within one class partition.

        Total order: score descending, then image_id, then object_index.
        Other partitions are never scanned.
        """
        part = self._require_partition(class_label)
        self._check_query(q, k)
        snap = self._snapshot(part)
        if k == 0 or snap.count == 0:
            self._note_scan(0)
            return []
        scores = score_rows(snap.rows[: snap.count], q.values)
        self._note_scan(snap.count)
        mask = self._confidence_mask(snap.confidence[: snap.count], min_confidence)
        if mask is not None:
            scores = np.where(mask, scores, np.float32(-np.inf))
        cand = _top_candidates(scores, k)
        cand = sorted(
            (i for i in cand if scores[i] != -np.inf),
            key=lambda i: (-scores[i], snap.image_ids[i], int(snap.object_index[i])),
        )[:k]
        return [
            ScoredObject(snap.image_ids[i], int(snap.object_index[i]), float(scores[i]))
            for i in cand
        ]

    def search_topk_images(
        self,
        class_label: ClassLabel,
        q: EmbeddingVector,
        k: int,
        *,
        min_confidence: float = 0.0,
    ) -> list[RankedResult]:
        """Exact top-k images by best matching object of the given class.

        One scan of the class partition maintains per-image running maxima
        over contiguous image blocks; images with no object of the class
        never appear. Ties between images break by image_id ascending, and
        within an image the smallest object index wins.
        """
        part = self._require_partition(class_label)
        self._check_query(q, k)
        snap = self._snapshot(part)
        if k == 0 or snap.count == 0:
            self._note_scan(0)
            return []
        scores = score_rows(snap.rows[: snap.count], q.values)
        self._note_scan(snap.count)
        mask = self._confidence_mask(snap.confidence[: snap.count], min_confidence)
        if mask is not None:
            scores = np.where(mask, scores, np.float32(-np.inf))
        run_max = np.maximum.reduceat(scores, snap.starts)
        cand = _top_candidates(run_max, k)
        cand = sorted(
            (r for r in cand if run_max[r] != -np.inf),
            key=lambda r: (-run_max[r], snap.run_image_ids[r]),
        )[:k]
        n_runs = snap.starts.shape[0]
        results = []
        for r in cand:
            lo = int(snap.starts[r])
            hi = int(snap.starts[r + 1]) if r + 1 < n_runs else snap.count
            best = lo + int(np.argmax(scores[lo:hi]))
            results.append(
                RankedResult(
                    image_id=snap.run_image_ids[r],
                    score=float(run_max[r]),
                    best_object_index=int(snap.object_index[best]),
                )
            )
        return results

    def search_topk_full_images(self, q: EmbeddingVector, k: int) -> list[RankedResult]:
        """Top-k by whole-image embeddings; no class gate, no object index."""
        self._check_query(q, k)
        snap = self._snapshot(self._full)
        if snap.count == 0:
            raise CapabilityError(
                "index holds no full-image embeddings; rebuild with them to "
                "use full-image search"
            )
        if k == 0:
            self._note_scan(0)
            return []
        scores = score_rows(snap.rows[: snap.count], q.values)
        self._note_scan(snap.count)
        cand = _top_candidates(scores, k)
        cand = sorted(cand, key=lambda i: (-scores[i], snap.image_ids[i]))[:k]
        return [
            RankedResult(image_id=snap.image_ids[i], score=float(scores[i]), best_object_index=None)
            for i in cand
        ]

    # -- persistence ---------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        """Write the index as a directory; loading reproduces results bitwise.

        Files are written to temporary names and atomically renamed, the
        manifest last, so an interrupted persist never yields a directory
        that parses but lies.
        """
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        with self._lock:
            partition_files: dict[str, str] = {}
            for i, label in enumerate(self._class_set):
                fname = f"partition_{i:04d}.bin"
                partition_files[label] = fname
                _write_partition_file(root / fname, self._partitions[label])
            full_name: Optional[str] = None
            if self._full.count > 0:
                full_name = _FULL_FILE
                _write_partition_file(root / _FULL_FILE, self._full)
            images_doc = {
                "images": [
                    {
                        "image_id": image_id,
                        "source_uri": e.source_uri,
                        "content_hash": e.content_hash.hex(),
                        "object_count": e.object_count,
                        "full_row": e.full_row,
                    }
                    for image_id, e in self._images.items()
                ]
            }
            _write_json(root / _IMAGES_FILE, images_doc)
            manifest = {
                "format_version": FORMAT_VERSION,
                "encoder": {
                    "encoder_id": self._encoder.encoder_id,
                    "dim": self._encoder.dim,
                    "modality": self._encoder.modality,
                },
                "class_set": self._class_set,
                "image_count": len(self._images),
                "object_count": self.object_count,
                "created": self._created,
                "modified": self._modified,
                "partitions": partition_files,
                "full_image_file": full_name,
            }
            _write_json(root / _MANIFEST_FILE, manifest)

    @classmethod
    def load(cls, path: str | Path) -> "Index":
        root = Path(path)
        manifest_path = root / _MANIFEST_FILE
        if not manifest_path.exists():
            raise FormatError(f"{root} does not contain an index (missing {_MANIFEST_FILE})")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptionError(f"manifest is not valid JSON: {exc}", partition=_MANIFEST_FILE)
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported index format version {version!r}")
        enc = manifest["encoder"]
        descriptor = EncoderDescriptor(
            encoder_id=enc["encoder_id"], dim=int(enc["dim"]), modality=enc["modality"]
        )
        index = cls(descriptor, manifest["class_set"])
        index._created = manifest.get("created", index._created)
        index._modified = manifest.get("modified", index._modified)

        for label in index._class_set:
            fname = manifest["partitions"].get(label)
            if fname is None:
                raise CorruptionError(f"manifest lists no file for class {label!r}", partition=label)
            fpath = root / fname
            if not fpath.exists():
                raise CorruptionError(f"partition file {fname} is missing", partition=fname)
            _read_partition_file(fpath, index._partitions[label], index.dim, fname)
        if manifest.get("full_image_file"):
            _read_partition_file(
                root / manifest["full_image_file"],
                index._full,
                index.dim,
                manifest["full_image_file"],
            )

        try:
            images_doc = json.loads((root / _IMAGES_FILE).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptionError(f"image table unreadable: {exc}", partition=_IMAGES_FILE)
        for e in images_doc.get("images", []):
            digest = bytes.fromhex(e["content_hash"])
            if len(digest) != 32:
                raise CorruptionError(
                    f"image {e['image_id']!r} has a malformed content hash",
                    partition=_IMAGES_FILE,
                )
            index._images[e["image_id"]] = _ImageEntry(
                source_uri=e["source_uri"],
                content_hash=digest,
                object_count=int(e["object_count"]),
                full_row=e.get("full_row"),
            )
            index._hashes.add(digest)

        if len(index._images) != manifest["image_count"]:
            raise CorruptionError(
                f"manifest says {manifest['image_count']} images, "
                f"found {len(index._images)}",
                partition=_MANIFEST_FILE,
            )
        if index.object_count != manifest["object_count"]:
            raise CorruptionError(
                f"manifest says {manifest['object_count']} objects, "
                f"found {index.object_count}",
                partition=_MANIFEST_FILE,
            )
        return index


def _top_candidates(values: np.ndarray, k: int) -> np.ndarray:
    """Indices whose value ties or beats the k-th largest.

    May return more than k entries when the boundary value is tied; the
    caller applies the full tie-break and truncates. This keeps selection
    O(n) while preserving the exact total order.
    """
    n = values.shape[0]
    if k >= n:
        return np.arange(n)
    part = np.argpartition(-values, k - 1)[:k]
    boundary = values[part].min()
    return np.nonzero(values >= boundary)[0]


# -- partition files ---------------------------------------------------------


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2))
    os.replace(tmp, path)


def _write_partition_file(path: Path, block: _RowBlock) -> None:
    """Layout: header, length-prefixed meta records + CRC64, f32 rows + CRC64."""
    m = block.count
    meta = bytearray()
    for i in range(m):
        ids = block.image_ids[i].encode("utf-8")
        payload = (
            struct.pack("<H", len(ids))
            + ids
            + struct.pack("<I", int(block.object_index[i]))
            + struct.pack("<4I", *(int(v) for v in block.bbox[i]))
            + struct.pack("<f", float(block.confidence[i]))
        )
        meta += struct.pack("<I", len(payload)) + payload
    emb = np.ascontiguousarray(block.rows, dtype="<f4").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_PARTITION_MAGIC, _PARTITION_VERSION, block.dim, m))
        fh.write(meta)
        fh.write(struct.pack("<Q", crc64(bytes(meta))))
        fh.write(emb)
        fh.write(struct.pack("<Q", crc64(emb)))
    os.replace(tmp, path)


def _read_partition_file(path: Path, block: _RowBlock, expect_dim: int, name: str) -> None:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptionError(f"partition {name} is truncated", partition=name)
    magic, version, dim, m = _HEADER.unpack_from(data, 0)
    if magic != _PARTITION_MAGIC:
        raise FormatError(f"partition {name}: bad magic {magic!r}")
    if version != _PARTITION_VERSION:
        raise FormatError(f"partition {name}: unsupported version {version}")
    if dim != expect_dim:
        raise FormatError(f"partition {name}: dim {dim} does not match index dim {expect_dim}")

    off = _HEADER.size
    image_ids: list[str] = []
    object_indices: list[int] = []
    bboxes: list[tuple[int, int, int, int]] = []
    confidences: list[Optional[float]] = []
    for _ in range(m):
        if off + 4 > len(data):
            raise CorruptionError(f"partition {name}: meta block truncated", partition=name)
        (rec_len,) = struct.unpack_from("<I", data, off)
        rec_end = off + 4 + rec_len
        if rec_len < 2 + 4 + 16 + 4 or rec_end > len(data):
            raise CorruptionError(f"partition {name}: malformed meta record", partition=name)
        p = off + 4
        (id_len,) = struct.unpack_from("<H", data, p)
        p += 2
        if p + id_len + 24 != rec_end:
            raise CorruptionError(f"partition {name}: malformed meta record", partition=name)
        try:
            image_id = data[p : p + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError(f"partition {name}: undecodable image id", partition=name)
        p += id_len
        obj_idx, bx, by, bw, bh = struct.unpack_from("<5I", data, p)
        p += 20
        (conf,) = struct.unpack_from("<f", data, p)
        image_ids.append(image_id)
        object_indices.append(obj_idx)
        bboxes.append((bx, by, bw, bh))
        confidences.append(None if np.isnan(conf) else float(conf))
        off = rec_end
    meta_span = data[_HEADER.size : off]
    if off + 8 > len(data):
        raise CorruptionError(f"partition {name}: missing meta checksum", partition=name)
    (stored,) = struct.unpack_from("<Q", data, off)
    if crc64(meta_span) != stored:
        raise CorruptionError(f"partition {name}: meta block checksum mismatch", partition=name)
    off += 8

    emb_bytes = m * dim * 4
    if off + emb_bytes + 8 > len(data):
        raise CorruptionError(f"partition {name}: embedding block truncated", partition=name)
    emb_span = data[off : off + emb_bytes]
    (stored,) = struct.unpack_from("<Q", data, off + emb_bytes)
    if crc64(emb_span) != stored:
        raise CorruptionError(
            f"partition {name}: embedding block checksum mismatch", partition=name
        )
    if off + emb_bytes + 8 != len(data):
        raise CorruptionError(f"partition {name}: trailing bytes after checksum", partition=name)

    if m == 0:
        return
    rows = np.frombuffer(emb_span, dtype="<f4").reshape(m, dim)
    # Re-group rows into per-image blocks. An image occupies exactly one
    # contiguous block (ingestion is atomic per image), so adjacency
    # reconstructs the original runs.
    block.reserve(m)
    i = 0
    while i < m:
        j = i + 1
        while j < m and image_ids[j] == image_ids[i]:
            j += 1
        block.append_image_block(
            image_ids[i],
            np.ascontiguousarray(rows[i:j], dtype=np.float32),
            object_indices[i:j],
            bboxes[i:j],
            confidences[i:j],
        )
        i = j
