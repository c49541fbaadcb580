"""Build a small in-memory corpus and search it.

Every image holds a handful of objects; each object belongs to a class
and carries an embedding. A query names a class and free text: only
objects of that class can score, the best object represents its image,
and images come back ranked. The toy encoder hashes tokens into the
latent space, so an object tagged ("police", "officer") genuinely sits
near the text "police officer".
"""

import hashlib

from objsearch import (
    ImageRecord,
    Index,
    ObjectRecord,
    Query,
    SyntheticTokenImage,
    ToyEncoder,
    run_query,
)

enc = ToyEncoder(64)
index = Index(enc.descriptor, ["person", "car"])

# image -> [(class, token set)]; tokens stand in for what a real
# vision encoder would see in the crop.
corpus = {
    "street_01": [("person", ("police", "officer")), ("car", ("sedan",))],
    "street_02": [("person", ("police",)), ("person", ("walker",))],
    "street_03": [("person", ("cyclist",)), ("car", ("taxi", "yellow"))],
    "street_04": [("car", ("bus",)), ("car", ("police", "cruiser"))],
    "street_05": [("person", ("vendor", "market"))],
}

items = []
for image_id, objects in corpus.items():
    records = [
        ObjectRecord(
            image_id=image_id,
            object_index=j,
            class_label=cls,
            bbox=(8 * j, 0, 8, 8),
            confidence=0.9,
            embedding=enc.encode_image(SyntheticTokenImage(tokens)),
        )
        for j, (cls, tokens) in enumerate(objects)
    ]
    items.append(
        (
            ImageRecord(
                image_id=image_id,
                source_uri=f"mem://{image_id}",
                content_hash=hashlib.sha256(image_id.encode()).digest(),
                object_count=len(records),
            ),
            records,
        )
    )

report = index.ingest(items)
print(f"ingested {report.added_images} images, {report.added_objects} objects")

print('\nperson / "police officer":')
outcome = run_query(index, enc, Query(class_label="person", text="police officer"), k=5)
for rank, r in enumerate(outcome.results, start=1):
    print(f"  {rank}. {r.image_id}  score={r.score:+.4f}  object {r.best_object_index}")

# street_04 has a car tagged "police cruiser", but the class gate keeps
# it out of a person query entirely; it is not merely ranked low.
ids = [r.image_id for r in outcome.results]
print(f"  street_04 excluded by the class gate: {'street_04' not in ids}")

print('\ncar / "police":')
outcome = run_query(index, enc, Query(class_label="car", text="police"), k=5)
for rank, r in enumerate(outcome.results, start=1):
    print(f"  {rank}. {r.image_id}  score={r.score:+.4f}")
print(f"  exhausted={outcome.exhausted} (fewer matching images than k)")

print(f"\nrows scanned by the last search: {index.scan_stats.last_rows_visited}"
      f" of {index.object_count} stored objects (only the car partition)")
