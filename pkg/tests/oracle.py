"""Brute-force reference implementations, written against the stated
behavior rather than the engine's code: score every object with an
explicit exclusion branch, aggregate per image with a max loop, and fully
sort. Deliberately slow and obvious.
"""

from __future__ import annotations

import numpy as np

_ONE = np.float32(1.0)


def cosine_f32(row_f32: np.ndarray, q_f64: np.ndarray) -> np.float32:
    """float64 dot, rounded to float32, clipped. Mirrors the engine's
    round-last contract so comparisons can be exact."""
    s = np.float32(np.dot(row_f32.astype(np.float64), q_f64))
    if s > _ONE:
        return _ONE
    if s < -_ONE:
        return -_ONE
    return s


def rank_images(objects, class_label, q_f64, k):
    """Top-k images by best object of the class.

    ``objects``: iterable of (image_id, object_index, class_label, f32 row).
    Returns [(image_id, score, best_object_index)] ordered by score desc,
    image_id asc; within an image, ties go to the smallest object index.
    """
    best: dict[str, tuple[np.float32, int]] = {}
    for image_id, j, cls, row in objects:
        if cls != class_label:
            continue  # excluded: the minus-infinity branch
        s = cosine_f32(row, q_f64)
        cur = best.get(image_id)
        if cur is None or s > cur[0] or (s == cur[0] and j < cur[1]):
            best[image_id] = (s, j)
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    return [(image_id, float(s), j) for image_id, (s, j) in ranked[:k]]


def rank_objects(objects, class_label, q_f64, k):
    """Top-k single objects of the class, total order (-score, id, index)."""
    scored = []
    for image_id, j, cls, row in objects:
        if cls != class_label:
            continue
        scored.append((image_id, j, cosine_f32(row, q_f64)))
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return [(image_id, j, float(s)) for image_id, j, s in scored[:k]]


def prefix_tp_curve(ranked, tp_ids, n):
    """Plain prefix sums of membership in the true-positive set."""
    curve = []
    total = 0
    for t in range(n):
        if t < len(ranked) and ranked[t] in tp_ids:
            total += 1
        curve.append(total)
    return curve
