"""Isolate, crop, and square object instances from panoptic annotations.

For every instance the pipeline blackens the background with the instance
mask, crops to the tight bounding box, and zero-pads the crop to a square,
preserving the aspect ratio of the content. The padding rule is fixed
(content centered, odd remainder to the bottom/right) so outputs are
byte-reproducible.

Annotations arrive as one JSON document per image:

    {"image_id": ..., "width": W, "height": H,
     "instances": [{"id": 1, "class": "car", "confidence": 0.9,
                    "tokens": [...]}, ...],
     "instance_map": base64 of W*H little-endian uint32, row-major}

``tokens`` (per instance or top-level) is optional and only consumed by
the deterministic test encoder; real deployments omit it.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ClassLabel, validate_class_label
from .errors import EmptyMaskError, InputError


@dataclass(frozen=True)
class PixelBuffer:
    """An RGB8 raster: row-major bytes, 3 channels, 8 bits each."""

    width: int
    height: int
    data: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InputError("pixel buffer dimensions must be positive")
        if len(self.data) != self.width * self.height * 3:
            raise InputError(
                f"pixel data length {len(self.data)} != width*height*3 "
                f"({self.width}x{self.height})"
            )

    def to_array(self) -> np.ndarray:
        """(height, width, 3) uint8 view of the pixel data."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelBuffer":
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise InputError("expected a (height, width, 3) uint8 array")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr.tobytes())

    @property
    def is_square(self) -> bool:
        return self.width == self.height


@dataclass(frozen=True)
class InstanceInfo:
    instance_id: int
    class_label: ClassLabel
    confidence: float
    tokens: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.instance_id <= 0:
            raise InputError("instance ids must be positive (0 marks background)")
        validate_class_label(self.class_label)
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class PanopticAnnotation:
    """Per-pixel instance ids plus the per-instance class/confidence list.

    Every nonzero id present in the map must appear exactly once in
    ``instances``; the reverse is not required (an instance may have lost
    all of its pixels and is then skipped at extraction time).
    """

    instance_map: np.ndarray  # (height, width) uint32, 0 = background
    instances: tuple[InstanceInfo, ...]
    image_tokens: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        m = self.instance_map
        if m.ndim != 2 or m.dtype != np.uint32:
            raise InputError("instance_map must be a 2-d uint32 array")
        declared = [i.instance_id for i in self.instances]
        if len(set(declared)) != len(declared):
            raise InputError("duplicate instance ids in annotation")
        present = set(int(v) for v in np.unique(m)) - {0}
        missing = present - set(declared)
        if missing:
            raise InputError(f"instance ids {sorted(missing)} appear in the map but are not declared")

    @property
    def width(self) -> int:
        return self.instance_map.shape[1]

    @property
    def height(self) -> int:
        return self.instance_map.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box: top-left (x, y) plus width and height."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise InputError("bounding box origin must be nonnegative")
        if self.width < 1 or self.height < 1:
            raise InputError("bounding box must cover at least one pixel")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.width, self.height)


@dataclass(frozen=True)
class ExtractedObject:
    crop: PixelBuffer
    class_label: ClassLabel
    bbox: BoundingBox
    confidence: float
    tokens: Optional[tuple[str, ...]] = None


@dataclass
class ExtractionResult:
    objects: list[ExtractedObject] = field(default_factory=list)
    skipped_empty: int = 0


def apply_mask(image: PixelBuffer, instance_map: np.ndarray, instance_id: int) -> PixelBuffer:
    """Blacken everything except the pixels of one instance.

    An id absent from the map yields an all-black buffer; callers detect
    that via the empty-mask error from tight_bbox.
    """
    if instance_id <= 0:
        raise InputError("instance_id must be positive")
    arr = image.to_array()
    if instance_map.shape != (image.height, image.width):
        raise InputError(
            f"instance map {instance_map.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    mask = instance_map == np.uint32(instance_id)
    out = np.where(mask[:, :, None], arr, np.uint8(0))
    return PixelBuffer.from_array(np.ascontiguousarray(out))


def tight_bbox(instance_map: np.ndarray, instance_id: int) -> BoundingBox:
    """Minimal box containing every pixel of the instance."""
    if instance_id <= 0:
        raise InputError("instance_id must be positive")
    ys, xs = np.nonzero(instance_map == np.uint32(instance_id))
    if ys.size == 0:
        raise EmptyMaskError(f"instance {instance_id} has no pixels")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return BoundingBox(x=x0, y=y0, width=x1 - x0 + 1, height=y1 - y0 + 1)


def crop(image: PixelBuffer, box: BoundingBox) -> PixelBuffer:
    """Cut the box out of the image; the box must lie fully inside."""
    if box.x + box.width > image.width or box.y + box.height > image.height:
        raise InputError("bounding box extends beyond the image")
    arr = image.to_array()
    sub = arr[box.y : box.y + box.height, box.x : box.x + box.width]
    return PixelBuffer.from_array(np.ascontiguousarray(sub))


def pad_to_square(buf: PixelBuffer) -> PixelBuffer:
    """Zero-pad to side = max(width, height), content centered.

    Odd padding puts the extra row/column at the bottom/right. Already
    square input is returned unchanged, which makes the operation
    idempotent byte-for-byte.
    """
    if buf.is_square:
        return buf
    side = max(buf.width, buf.height)
    out = np.zeros((side, side, 3), dtype=np.uint8)
    top = (side - buf.height) // 2
    left = (side - buf.width) // 2
    out[top : top + buf.height, left : left + buf.width] = buf.to_array()
    return PixelBuffer.from_array(out)


def extract_objects(image: PixelBuffer, ann: PanopticAnnotation) -> ExtractionResult:
    """All isolated, squared object crops of one image.

    Output order follows instance_id ascending; that order defines the
    object index downstream. Instances whose mask is empty are skipped and
    tallied, not errored: low-confidence detections are deliberately kept
    in the corpus, so robustness wins over strictness. No confidence
    filtering happens here.
    """
    if ann.instance_map.shape != (image.height, image.width):
        raise InputError(
            f"annotation {ann.instance_map.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    result = ExtractionResult()
    for info in sorted(ann.instances, key=lambda i: i.instance_id):
        try:
            box = tight_bbox(ann.instance_map, info.instance_id)
        except EmptyMaskError:
            result.skipped_empty += 1
            continue
        masked = apply_mask(image, ann.instance_map, info.instance_id)
        squared = pad_to_square(crop(masked, box))
        result.objects.append(
            ExtractedObject(
                crop=squared,
                class_label=info.class_label,
                bbox=box,
                confidence=info.confidence,
                tokens=info.tokens,
            )
        )
    return result


# -- annotation files -------------------------------------------------------


def annotation_to_json(image_id: str, ann: PanopticAnnotation) -> dict:
    doc = {
        "image_id": image_id,
        "width": ann.width,
        "height": ann.height,
        "instances": [
            {
                "id": i.instance_id,
                "class": i.class_label,
                "confidence": i.confidence,
                **({"tokens": list(i.tokens)} if i.tokens is not None else {}),
            }
            for i in ann.instances
        ],
        "instance_map": base64.b64encode(
            ann.instance_map.astype("<u4").tobytes()
        ).decode("ascii"),
    }
    if ann.image_tokens is not None:
        doc["tokens"] = list(ann.image_tokens)
    return doc


def annotation_from_json(doc: dict) -> tuple[str, PanopticAnnotation]:
    try:
        image_id = doc["image_id"]
        width = int(doc["width"])
        height = int(doc["height"])
        raw = base64.b64decode(doc["instance_map"])
        instances = tuple(
            InstanceInfo(
                instance_id=int(e["id"]),
                class_label=e["class"],
                confidence=float(e.get("confidence", 1.0)),
                tokens=tuple(e["tokens"]) if "tokens" in e else None,
            )
            for e in doc["instances"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed annotation document: {exc}") from exc
    if len(raw) != width * height * 4:
        raise InputError(
            f"instance_map has {len(raw)} bytes, expected {width * height * 4} "
            f"for {width}x{height}"
        )
    instance_map = np.frombuffer(raw, dtype="<u4").reshape(height, width).astype(np.uint32)
    tokens = tuple(doc["tokens"]) if "tokens" in doc else None
    return image_id, PanopticAnnotation(
        instance_map=instance_map, instances=instances, image_tokens=tokens
    )


def write_annotation_file(path: str | Path, image_id: str, ann: PanopticAnnotation) -> None:
    Path(path).write_text(json.dumps(annotation_to_json(image_id, ann)))


def load_annotation_file(path: str | Path) -> tuple[str, PanopticAnnotation]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"annotation {path} is not valid JSON: {exc}") from exc
    return annotation_from_json(doc)
