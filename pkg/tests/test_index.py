"""Store behavior: ingestion accounting, exact search vs brute force,
persistence, and corruption detection.
"""

import threading

import numpy as np
import pytest

import oracle
from conftest import build_index, content_hash, random_corpus, unit_vector
from objsearch import (
    CapabilityError,
    ConfigurationError,
    EmbeddingVector,
    EncoderDescriptor,
    ImageRecord,
    Index,
    InputError,
    ObjectRecord,
    QueryError,
)
from objsearch.errors import CorruptionError, FormatError

CLASSES = ["person", "car", "traffic sign"]


def record(image_id, n_objects, *, with_full=None):
    return ImageRecord(
        image_id=image_id,
        source_uri=f"mem://{image_id}",
        content_hash=content_hash(image_id),
        object_count=n_objects,
        full_image_embedding=with_full,
    )


def obj(image_id, j, cls, emb, confidence=0.5):
    return ObjectRecord(image_id, j, cls, (j, 0, 3, 3), confidence, emb)


def fresh_index(dim=8, classes=CLASSES):
    return Index(EncoderDescriptor("toy-test", dim, "both"), classes)


class TestIngest:
    def test_counts(self, rng):
        idx = fresh_index()
        items = [
            (record("a", 3), [obj("a", j, "car", unit_vector(rng, 8)) for j in range(3)]),
            (record("b", 3), [obj("b", j, "person", unit_vector(rng, 8)) for j in range(3)]),
        ]
        report = idx.ingest(items)
        assert report.added_images == 2
        assert report.added_objects == 6
        assert report.skipped_duplicates == 0
        stats = idx.stats()
        assert sum(stats.classes.values()) == 6
        assert stats.image_count == 2

    def test_double_ingest_skips_wholesale(self, rng):
        idx = fresh_index()
        items, _ = random_corpus(rng, 20, 4, 8, CLASSES)
        first = idx.ingest(items)
        second = idx.ingest(items)
        assert second.added_images == 0
        assert second.added_objects == 0
        assert second.skipped_duplicates == first.added_images

    def test_zero_object_image(self):
        idx = fresh_index()
        report = idx.ingest([(record("empty", 0), [])])
        assert report.added_images == 1
        assert report.added_objects == 0
        assert idx.has_image("empty")

    def test_unknown_class_rejected_with_warning(self, rng):
        idx = fresh_index()
        items = [
            (
                record("a", 2),
                [
                    obj("a", 0, "car", unit_vector(rng, 8)),
                    obj("a", 1, "zeppelin", unit_vector(rng, 8)),
                ],
            )
        ]
        report = idx.ingest(items)
        assert report.added_images == 1
        assert report.added_objects == 1
        assert any("zeppelin" in w for w in report.warnings)

    def test_same_id_different_content_rejected(self, rng):
        idx = fresh_index()
        idx.ingest([(record("a", 1), [obj("a", 0, "car", unit_vector(rng, 8))])])
        clone = ImageRecord("a", "mem://a2", content_hash("other"), 1)
        report = idx.ingest([(clone, [obj("a", 0, "car", unit_vector(rng, 8))])])
        assert report.added_images == 0
        assert any("already present" in w for w in report.warnings)

    def test_dim_mismatch_raises(self, rng):
        idx = fresh_index(dim=8)
        with pytest.raises(ConfigurationError):
            idx.ingest([(record("a", 1), [obj("a", 0, "car", unit_vector(rng, 16))])])

    def test_duplicate_object_index_warned(self, rng):
        idx = fresh_index()
        report = idx.ingest(
            [
                (
                    record("a", 2),
                    [
                        obj("a", 0, "car", unit_vector(rng, 8)),
                        obj("a", 0, "person", unit_vector(rng, 8)),
                    ],
                )
            ]
        )
        assert report.added_objects == 1
        assert any("duplicate object index" in w for w in report.warnings)

    def test_duplicate_class_set_rejected(self):
        with pytest.raises(ConfigurationError):
            fresh_index(classes=["car", "car"])


def query_vec(rng, dim=8):
    return unit_vector(rng, dim)


class TestSearchImages:
    def test_max_aggregation(self, rng):
        idx = fresh_index()
        strong = EmbeddingVector(np.eye(8)[0])
        weak = EmbeddingVector(np.ones(8))
        idx.ingest([(record("a", 2), [obj("a", 0, "car", weak), obj("a", 1, "car", strong)])])
        q = EmbeddingVector(np.eye(8)[0])
        results = idx.search_topk_images("car", q, 5)
        assert len(results) == 1
        assert results[0].best_object_index == 1
        assert results[0].score == pytest.approx(1.0)

    def test_unknown_class_lists_valid(self, rng):
        idx = fresh_index()
        with pytest.raises(QueryError) as err:
            idx.search_topk_images("animal", query_vec(rng), 5)
        assert err.value.valid_classes == sorted(CLASSES)

    def test_empty_partition(self, rng):
        idx = fresh_index()
        assert idx.search_topk_images("car", query_vec(rng), 5) == []

    def test_k_zero(self, rng):
        idx = fresh_index()
        idx.ingest([(record("a", 1), [obj("a", 0, "car", unit_vector(rng, 8))])])
        assert idx.search_topk_images("car", query_vec(rng), 0) == []

    def test_negative_k(self, rng):
        idx = fresh_index()
        with pytest.raises(InputError):
            idx.search_topk_images("car", query_vec(rng), -1)

    def test_tie_order_by_image_id(self):
        idx = fresh_index()
        shared = EmbeddingVector(np.ones(8))
        for image_id in ("zebra", "alpha", "mid"):
            idx.ingest([(record(image_id, 1), [obj(image_id, 0, "car", shared)])])
        results = idx.search_topk_images("car", shared, 3)
        assert [r.image_id for r in results] == ["alpha", "mid", "zebra"]
        assert len({r.score for r in results}) == 1

    def test_oracle_small_random(self, rng):
        for trial in range(25):
            items, flat = random_corpus(rng, 30, 5, 8, CLASSES)
            idx = build_index(items, 8, CLASSES)
            q = query_vec(rng)
            for cls in CLASSES:
                for k in (1, 3, 100):
                    got = [
                        (r.image_id, r.score, r.best_object_index)
                        for r in idx.search_topk_images(cls, q, k)
                    ]
                    want = oracle.rank_images(flat, cls, q.values, k)
                    assert got == want

    def test_monotone_k(self, rng):
        items, _ = random_corpus(rng, 50, 4, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        q = query_vec(rng)
        prev = []
        for k in range(0, 30):
            cur = idx.search_topk_images("car", q, k)
            assert cur[: len(prev)] == prev
            prev = cur

    def test_min_confidence_filters_but_keeps_unknown(self, rng):
        idx = fresh_index()
        e = EmbeddingVector(np.eye(8)[0])
        idx.ingest(
            [
                (record("low", 1), [obj("low", 0, "car", e, confidence=0.1)]),
                (record("high", 1), [obj("high", 0, "car", e, confidence=0.9)]),
                (record("unk", 1), [obj("unk", 0, "car", e, confidence=None)]),
            ]
        )
        all_ids = {r.image_id for r in idx.search_topk_images("car", e, 10)}
        assert all_ids == {"low", "high", "unk"}
        filtered = {r.image_id for r in idx.search_topk_images("car", e, 10, min_confidence=0.5)}
        # absent confidence is unknown, not low; it survives the filter
        assert filtered == {"high", "unk"}


class TestSearchObjects:
    def test_oracle_small_random(self, rng):
        for trial in range(10):
            items, flat = random_corpus(rng, 25, 6, 8, CLASSES)
            idx = build_index(items, 8, CLASSES)
            q = query_vec(rng)
            for cls in CLASSES:
                got = [
                    (s.image_id, s.object_index, s.score)
                    for s in idx.search_topk_objects(cls, q, 7)
                ]
                assert got == oracle.rank_objects(flat, cls, q.values, 7)

    def test_k_covers_partition(self, rng):
        items, flat = random_corpus(rng, 10, 3, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        q = query_vec(rng)
        n_car = idx.stats().classes["car"]
        assert len(idx.search_topk_objects("car", q, n_car + 50)) == n_car


class TestClassGate:
    def test_returned_objects_match_query_class(self, rng):
        items, flat = random_corpus(rng, 40, 5, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        by_key = {(i, j): c for i, j, c, _ in flat}
        q = query_vec(rng)
        for cls in CLASSES:
            for r in idx.search_topk_images(cls, q, 50):
                assert by_key[(r.image_id, r.best_object_index)] == cls

    def test_scan_bounded_by_partition(self, rng):
        items, _ = random_corpus(rng, 40, 5, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        q = query_vec(rng)
        for cls in CLASSES:
            size = idx.stats().classes[cls]
            idx.search_topk_images(cls, q, 10)
            assert idx.scan_stats.last_rows_visited <= size


class TestFullImageSearch:
    def test_capability_error_without_full_embeddings(self, rng):
        items, _ = random_corpus(rng, 5, 2, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        with pytest.raises(CapabilityError):
            idx.search_topk_full_images(query_vec(rng), 5)

    def test_ranks_by_full_embedding(self, rng):
        idx = fresh_index()
        target = EmbeddingVector(np.eye(8)[0])
        other = EmbeddingVector(np.eye(8)[1])
        idx.ingest(
            [
                (record("hit", 0, with_full=target), []),
                (record("miss", 0, with_full=other), []),
            ]
        )
        results = idx.search_topk_full_images(target, 2)
        assert [r.image_id for r in results] == ["hit", "miss"]
        assert results[0].best_object_index is None

    def test_matches_object_search_on_degenerate_data(self, rng):
        # One object per image, same vectors in both stores.
        idx = fresh_index()
        items = []
        for i in range(20):
            e = unit_vector(rng, 8)
            image_id = f"img{i:03d}"
            items.append(
                (record(image_id, 1, with_full=e), [obj(image_id, 0, "car", e)])
            )
        idx.ingest(items)
        q = query_vec(rng)
        via_objects = [(r.image_id, r.score) for r in idx.search_topk_images("car", q, 20)]
        via_full = [(r.image_id, r.score) for r in idx.search_topk_full_images(q, 20)]
        assert via_objects == via_full


class TestPersistence:
    def test_roundtrip_bitwise(self, rng, tmp_path):
        items, _ = random_corpus(rng, 30, 5, 8, CLASSES)
        with_full = []
        for img, objs in items:
            with_full.append(
                (
                    ImageRecord(
                        img.image_id,
                        img.source_uri,
                        img.content_hash,
                        img.object_count,
                        full_image_embedding=unit_vector(rng, 8),
                    ),
                    objs,
                )
            )
        idx = fresh_index()
        idx.ingest(with_full)
        idx.persist(tmp_path / "idx")
        loaded = Index.load(tmp_path / "idx")
        for _ in range(20):
            q = query_vec(rng)
            for cls in CLASSES:
                assert idx.search_topk_images(cls, q, 10) == loaded.search_topk_images(cls, q, 10)
            assert idx.search_topk_full_images(q, 10) == loaded.search_topk_full_images(q, 10)

    def test_empty_roundtrip(self, rng, tmp_path):
        idx = fresh_index()
        idx.persist(tmp_path / "idx")
        loaded = Index.load(tmp_path / "idx")
        assert loaded.search_topk_images("car", query_vec(rng), 5) == []
        assert loaded.stats().image_count == 0

    def test_stats_survive(self, rng, tmp_path):
        items, _ = random_corpus(rng, 12, 3, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        idx.persist(tmp_path / "idx")
        loaded = Index.load(tmp_path / "idx")
        assert loaded.stats() == idx.stats()

    def test_every_single_byte_flip_is_detected_somewhere(self, rng, tmp_path):
        items, _ = random_corpus(rng, 6, 3, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        idx.persist(tmp_path / "idx")
        part = next((tmp_path / "idx").glob("partition_*.bin"))
        data = bytearray(part.read_bytes())
        positions = list(range(0, len(data), max(1, len(data) // 64))) + [len(data) - 1]
        for pos in positions:
            mutated = bytearray(data)
            mutated[pos] ^= 0x40
            part.write_bytes(bytes(mutated))
            with pytest.raises((CorruptionError, FormatError)):
                Index.load(tmp_path / "idx")
        part.write_bytes(bytes(data))
        Index.load(tmp_path / "idx")  # pristine file loads again

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError):
            Index.load(tmp_path)

    def test_truncated_partition(self, rng, tmp_path):
        items, _ = random_corpus(rng, 6, 3, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        idx.persist(tmp_path / "idx")
        part = next((tmp_path / "idx").glob("partition_*.bin"))
        part.write_bytes(part.read_bytes()[:-5])
        with pytest.raises(CorruptionError) as err:
            Index.load(tmp_path / "idx")
        assert err.value.partition is not None

    def test_ingestion_idempotence_on_search_results(self, rng, tmp_path):
        items, _ = random_corpus(rng, 15, 4, 8, CLASSES)
        idx = build_index(items, 8, CLASSES)
        q = query_vec(rng)
        before = idx.search_topk_images("person", q, 10)
        idx.ingest(items)
        assert idx.search_topk_images("person", q, 10) == before


class TestAccessors:
    def test_object_info(self, rng):
        idx = fresh_index()
        idx.ingest(
            [(record("a", 1), [obj("a", 0, "car", unit_vector(rng, 8), confidence=0.7)])]
        )
        cls, bbox, conf = idx.object_info("a", 0)
        assert cls == "car"
        assert bbox == (0, 0, 3, 3)
        assert conf == pytest.approx(0.7)
        assert idx.object_info("a", 9) is None
        assert idx.object_info("nope", 0) is None

    def test_image_record_reconstruction(self, rng):
        idx = fresh_index()
        full = unit_vector(rng, 8)
        idx.ingest([(record("a", 0, with_full=full), [])])
        back = idx.image_record("a")
        assert back.image_id == "a"
        assert back.full_image_embedding is not None
        assert np.allclose(back.full_image_embedding.values, full.values, atol=1e-7)
        assert idx.image_record("missing") is None

    def test_has_content_hash(self, rng):
        idx = fresh_index()
        idx.ingest([(record("a", 0), [])])
        assert idx.has_content_hash(content_hash("a"))
        assert not idx.has_content_hash(content_hash("b"))


class TestConcurrency:
    def test_readers_never_see_partial_images(self, rng):
        """Hammer searches while a writer ingests; every observed image
        must be complete (its best object resolvable) at all times."""
        idx = fresh_index()
        seed_items, _ = random_corpus(rng, 10, 3, 8, CLASSES)
        idx.ingest(seed_items)
        q = query_vec(rng)
        stop = threading.Event()
        failures = []

        def reader():
            while not stop.is_set():
                try:
                    for r in idx.search_topk_images("car", q, 10):
                        assert r.best_object_index is not None
                        info = idx.object_info(r.image_id, r.best_object_index)
                        assert info is not None and info[0] == "car"
                except Exception as exc:  # surfaced after join
                    failures.append(exc)
                    return

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        for i in range(30):
            extra_rng = np.random.default_rng(1000 + i)
            more, _ = random_corpus(extra_rng, 5, 3, 8, CLASSES)
            renamed = [
                (
                    ImageRecord(
                        f"w{i}_{img.image_id}",
                        img.source_uri,
                        content_hash(f"w{i}_{img.image_id}"),
                        img.object_count,
                    ),
                    [
                        ObjectRecord(
                            f"w{i}_{img.image_id}",
                            o.object_index,
                            o.class_label,
                            o.bbox,
                            o.confidence,
                            o.embedding,
                        )
                        for o in objs
                    ],
                )
                for img, objs in more
            ]
            idx.ingest(renamed)
        stop.set()
        for t in threads:
            t.join(timeout=10)
        assert failures == []
