"""An index that lives on disk and grows without rework.

Annotation documents (instance map + per-instance class/confidence,
plus token lists for the toy encoder) are ingested from a directory.
Content hashing makes ingestion incremental: re-running over the same
files processes nothing, and dropping ten new files in means exactly
ten images of work. Persisted stores reload to byte-identical search
results, and every file is checksummed so corruption fails loudly at
load instead of quietly mis-ranking.
"""

import tempfile
from pathlib import Path

import numpy as np

from objsearch import (
    Index,
    InstanceInfo,
    PanopticAnnotation,
    Query,
    ToyEncoder,
    ingest_dataset,
    run_query,
    write_annotation_file,
)

root = Path(tempfile.mkdtemp())
ann_dir = root / "annotations"
ann_dir.mkdir()


def write_one(image_id: str, objects: list[tuple[str, tuple[str, ...]]]) -> None:
    """One vertical strip of pixels per instance; disjoint by construction."""
    h, w = 12, 8 * max(1, len(objects))
    instance_map = np.zeros((h, w), np.uint32)
    instances = []
    for i, (cls, tokens) in enumerate(objects):
        instance_map[2 : h - 2, 8 * i + 1 : 8 * i + 7] = i + 1
        instances.append(InstanceInfo(i + 1, cls, 0.9, tokens=tokens))
    ann = PanopticAnnotation(instance_map=instance_map, instances=tuple(instances))
    write_annotation_file(ann_dir / f"{image_id}.json", image_id, ann)


for i in range(8):
    write_one(f"lot_{i:02d}", [("car", ("sedan", f"bay{i}")), ("person", ("driver",))])
write_one("lot_99", [("person", ("police", "officer"))])

enc = ToyEncoder(64)
index = Index(enc.descriptor, ["person", "car"])

report = ingest_dataset(index, ann_dir, None, enc)
print(f"first run:  processed {report.processed_images}, "
      f"skipped {report.skipped_existing}")

report = ingest_dataset(index, ann_dir, None, enc)
print(f"second run: processed {report.processed_images}, "
      f"skipped {report.skipped_existing}  (nothing changed, nothing done)")

for i in range(10):
    write_one(f"new_{i:02d}", [("person", ("cyclist", f"lane{i}"))])
report = ingest_dataset(index, ann_dir, None, enc)
print(f"after +10:  processed {report.processed_images}, "
      f"skipped {report.skipped_existing}  (only the new files)")

query = Query(class_label="person", text="police officer")
before = [(r.image_id, r.score) for r in run_query(index, enc, query, k=3).results]

store = root / "index"
index.persist(store)
reloaded = Index.load(store)
after = [(r.image_id, r.score) for r in run_query(reloaded, enc, query, k=3).results]

print(f"\npersisted to {store}")
print(f"results identical after reload: {before == after}")
print(f"top hit: {after[0][0]} at {after[0][1]:+.4f}")

# Flip one byte in a partition file: the load refuses it outright.
victim = next(p for p in sorted(store.iterdir()) if p.name.startswith("partition"))
blob = bytearray(victim.read_bytes())
blob[len(blob) // 2] ^= 0x01
victim.write_bytes(bytes(blob))
try:
    Index.load(store)
    print("corruption NOT detected (this should never print)")
except Exception as exc:
    print(f"corrupted store rejected at load: {type(exc).__name__}")
