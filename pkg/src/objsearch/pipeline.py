"""Dataset ingestion: annotation + image files in, indexed embeddings out.

The expensive stages (decode, mask, crop, encode) run only for images the
index has never seen: content hashes are checked first, against raw file
bytes, so a re-run over an unchanged dataset touches no pixels at all and
a renamed file is still recognized. Per-image work is independent and
fans out over a thread pool; results are ingested in deterministic
(annotation filename) order so the index layout does not depend on thread
scheduling.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from PIL import Image

from .core import EmbeddingVector, ImageRecord, ObjectRecord
from .encoder import (
    EmbeddingFileReader,
    RemoteEncoder,
    SyntheticTokenImage,
    ToyEncoder,
)
from .errors import ConfigurationError, EmptyMaskError, InputError
from .index import IngestReport, Index
from .preprocess import (
    BoundingBox,
    PanopticAnnotation,
    PixelBuffer,
    extract_objects,
    load_annotation_file,
    pad_to_square,
    tight_bbox,
)

ObjectEncoder = Union[ToyEncoder, RemoteEncoder, EmbeddingFileReader]

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


@dataclass
class PipelineReport:
    """What one ingestion run did, stage by stage.

    ``processed_images`` counts images that actually went through
    preprocessing and encoding; ``skipped_existing`` were recognized by
    content hash and never touched.
    """

    processed_images: int = 0
    skipped_existing: int = 0
    failed_images: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    ingest: IngestReport = field(default_factory=IngestReport)


def load_image_rgb(path: Union[str, Path]) -> PixelBuffer:
    """Decode any common raster format to an RGB8 pixel buffer."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return PixelBuffer(width=rgb.width, height=rgb.height, data=rgb.tobytes())


def file_digest(path: Union[str, Path]) -> bytes:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.digest()


def find_image_file(images_dir: Optional[Path], image_id: str) -> Optional[Path]:
    if images_dir is None:
        return None
    for ext in _IMAGE_EXTS:
        candidate = images_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    return None


@dataclass
class _Task:
    image_id: str
    ann: PanopticAnnotation
    ann_path: Path
    image_path: Optional[Path]
    digest: bytes


def ingest_dataset(
    index: Index,
    annotations_dir: Union[str, Path],
    images_dir: Optional[Union[str, Path]],
    encoder: ObjectEncoder,
    *,
    with_full_image: bool = False,
    workers: int = 1,
) -> PipelineReport:
    """Ingest every annotation in a directory into the index.

    ``encoder`` decides where object embeddings come from: a toy encoder
    consumes annotation token lists, a remote encoder consumes squared
    pixel crops, and an embedding-file reader looks up precomputed
    vectors. Annotations are ``<image_id>.json`` documents; the matching
    image file (same stem) is located in ``images_dir`` when present.
    """
    if encoder.descriptor.dim != index.dim:
        raise ConfigurationError(
            f"encoder dim {encoder.descriptor.dim} does not match index dim {index.dim}"
        )
    ann_dir = Path(annotations_dir)
    img_dir = Path(images_dir) if images_dir is not None else None
    if not ann_dir.is_dir():
        raise InputError(f"annotation directory {ann_dir} does not exist")

    report = PipelineReport()
    tasks: list[_Task] = []
    seen_now: set[bytes] = set()
    for ann_path in sorted(ann_dir.glob("*.json")):
        try:
            image_id, ann = load_annotation_file(ann_path)
        except InputError as exc:
            report.failed_images.append(f"{ann_path.name}: {exc}")
            continue
        image_path = find_image_file(img_dir, image_id)
        digest = file_digest(image_path) if image_path else file_digest(ann_path)
        if index.has_content_hash(digest) or digest in seen_now:
            report.skipped_existing += 1
            continue
        seen_now.add(digest)
        tasks.append(_Task(image_id, ann, ann_path, image_path, digest))

    def run(task: _Task):
        return _process_one(task, encoder, with_full_image)

    items: list[tuple[ImageRecord, list[ObjectRecord]]] = []
    if tasks:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for task, outcome in zip(tasks, pool.map(run, tasks)):
                record, objects, local_warnings, error = outcome
                report.warnings.extend(local_warnings)
                if error is not None:
                    report.failed_images.append(f"{task.image_id}: {error}")
                    continue
                report.processed_images += 1
                items.append((record, objects))
    report.ingest = index.ingest(items)
    return report


def _process_one(
    task: _Task, encoder: ObjectEncoder, with_full_image: bool
) -> tuple[Optional[ImageRecord], list[ObjectRecord], list[str], Optional[str]]:
    """Preprocess and encode one image. Returns (record, objects, warnings, error)."""
    warnings: list[str] = []
    try:
        if isinstance(encoder, RemoteEncoder):
            if task.image_path is None:
                return None, [], warnings, "no image file found and the encoder needs pixels"
            image = load_image_rgb(task.image_path)
            extraction = extract_objects(image, task.ann)
            specs = [
                (j, obj.class_label, obj.bbox, obj.confidence, encoder.encode_image(obj.crop))
                for j, obj in enumerate(extraction.objects)
            ]
            full = (
                encoder.encode_image(pad_to_square(image)) if with_full_image else None
            )
        else:
            specs, full, warnings = _encode_without_pixels(task, encoder, with_full_image)
    except (InputError, ConfigurationError) as exc:
        return None, [], warnings, str(exc)

    objects = [
        ObjectRecord(
            image_id=task.image_id,
            object_index=j,
            class_label=class_label,
            bbox=bbox.as_tuple(),
            confidence=confidence,
            embedding=embedding,
        )
        for j, class_label, bbox, confidence, embedding in specs
    ]
    record = ImageRecord(
        image_id=task.image_id,
        source_uri=str(task.image_path if task.image_path else task.ann_path),
        content_hash=task.digest,
        object_count=len(objects),
        full_image_embedding=full,
    )
    return record, objects, warnings, None


def _encode_without_pixels(
    task: _Task, encoder: ObjectEncoder, with_full_image: bool
) -> tuple[
    list[tuple[int, str, BoundingBox, float, EmbeddingVector]],
    Optional[EmbeddingVector],
    list[str],
]:
    """Object specs from the instance map alone (toy and file encoders).

    Bounding boxes come from the masks; embeddings come from token lists
    or from a precomputed file. The accepted-object ordering (instance_id
    ascending, empty masks skipped) is identical to the pixel path, so
    object indices agree with any embedding file produced against it; an
    object whose precomputed embedding is missing leaves a gap rather
    than shifting later indices.
    """
    warnings: list[str] = []
    specs: list[tuple[int, str, BoundingBox, float, EmbeddingVector]] = []
    next_index = 0
    for info in sorted(task.ann.instances, key=lambda i: i.instance_id):
        try:
            box = tight_bbox(task.ann.instance_map, info.instance_id)
        except EmptyMaskError:
            continue
        j = next_index
        next_index += 1
        if isinstance(encoder, EmbeddingFileReader):
            emb = encoder.get(task.image_id, j)
            if emb is None:
                warnings.append(
                    f"{task.image_id}/{j}: no precomputed embedding; object dropped"
                )
                continue
        else:
            tokens = info.tokens if info.tokens else (info.class_label,)
            emb = encoder.encode_image(SyntheticTokenImage(tokens=tuple(tokens)))
        specs.append((j, info.class_label, box, info.confidence, emb))

    full: Optional[EmbeddingVector] = None
    if with_full_image:
        if isinstance(encoder, EmbeddingFileReader):
            full = encoder.get_full(task.image_id)
            if full is None:
                warnings.append(f"{task.image_id}: no precomputed full-image embedding")
        else:
            tokens = task.ann.image_tokens
            if not tokens:
                merged: list[str] = []
                for info in sorted(task.ann.instances, key=lambda i: i.instance_id):
                    merged.extend(info.tokens if info.tokens else (info.class_label,))
                tokens = tuple(merged)
            if tokens:
                full = encoder.encode_image(SyntheticTokenImage(tokens=tuple(tokens)))
            else:
                warnings.append(
                    f"{task.image_id}: no tokens available for a full-image embedding"
                )
    return specs, full, warnings


# -- crop regeneration (service support) -------------------------------------


def regenerate_crop(
    image_path: Union[str, Path], ann: PanopticAnnotation, object_index: int
) -> PixelBuffer:
    """Recompute the squared crop for one stored object index.

    Crops are derivable from the source image plus its annotation, so they
    are never persisted; this is the derivation the crop endpoints use.
    """
    image = load_image_rgb(image_path)
    extraction = extract_objects(image, ann)
    if not 0 <= object_index < len(extraction.objects):
        raise InputError(
            f"object index {object_index} out of range; image has "
            f"{len(extraction.objects)} objects"
        )
    return extraction.objects[object_index].crop
