import hashlib
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from objsearch import EmbeddingVector, ImageRecord, Index, ObjectRecord, ToyEncoder


def content_hash(s: str) -> bytes:
    return hashlib.sha256(s.encode()).digest()


def unit_vector(rng: np.random.Generator, dim: int) -> EmbeddingVector:
    v = rng.standard_normal(dim)
    return EmbeddingVector(v)


def random_corpus(rng, n_images, max_objects, dim, classes):
    """(ImageRecord, [ObjectRecord]) pairs plus a flat view for oracles.

    The flat view carries the float32 rows exactly as the index stores
    them, so reference computations see identical inputs.
    """
    items = []
    flat = []
    for i in range(n_images):
        image_id = f"img{i:05d}"
        n_obj = int(rng.integers(0, max_objects + 1))
        objects = []
        for j in range(n_obj):
            cls = classes[int(rng.integers(0, len(classes)))]
            emb = unit_vector(rng, dim)
            objects.append(
                ObjectRecord(
                    image_id=image_id,
                    object_index=j,
                    class_label=cls,
                    bbox=(j, 0, 4, 4),
                    confidence=float(rng.uniform(0, 1)),
                    embedding=emb,
                )
            )
            flat.append((image_id, j, cls, emb.values.astype(np.float32)))
        items.append(
            (
                ImageRecord(
                    image_id=image_id,
                    source_uri=f"mem://{image_id}",
                    content_hash=content_hash(image_id),
                    object_count=n_obj,
                ),
                objects,
            )
        )
    return items, flat


def build_index(items, dim, classes, encoder_id="toy-test"):
    from objsearch import EncoderDescriptor

    index = Index(EncoderDescriptor(encoder_id, dim, "both"), list(classes))
    index.ingest(items)
    return index


@pytest.fixture
def toy64():
    return ToyEncoder(64)


@pytest.fixture
def rng():
    return np.random.default_rng(0xA11CE)
