"""The human verification loop: search, judge, plot the curve.

A ranking is only as good as the results a reviewer can confirm. Each
query gets a stable fingerprint; judgments are appended to a journal
keyed by that fingerprint, so re-running the same query resumes where
the reviewer left off. The cumulative true-positive curve then shows
how quickly confirmed hits accumulate down the ranking, and two
methods can be compared by their final counts.
"""

import hashlib
import tempfile
from pathlib import Path

from objsearch import (
    ImageRecord,
    Index,
    Judgment,
    JudgmentJournal,
    ObjectRecord,
    Query,
    SyntheticTokenImage,
    ToyEncoder,
    compare_methods,
    cumulative_tp_curve,
    run_query,
)

enc = ToyEncoder(64)
index = Index(enc.descriptor, ["sign"])

# Six images with one sign each; half are actual stop signs.
tokensets = {
    "road_a": ("stop", "octagon"),
    "road_b": ("stop",),
    "road_c": ("yield", "triangle"),
    "road_d": ("stop", "pole"),
    "road_e": ("limit", "speed"),
    "road_f": ("merge",),
}
items = []
for image_id, tokens in tokensets.items():
    items.append(
        (
            ImageRecord(image_id, f"mem://{image_id}",
                        hashlib.sha256(image_id.encode()).digest(), 1),
            [ObjectRecord(image_id, 0, "sign", (0, 0, 8, 8), 0.9,
                          enc.encode_image(SyntheticTokenImage(tokens)))],
        )
    )
index.ingest(items)

outcome = run_query(index, enc, Query(class_label="sign", text="stop"), k=6)
print(f"query fingerprint: {outcome.query_id}")
for rank, r in enumerate(outcome.results, start=1):
    print(f"  {rank}. {r.image_id}  {r.score:+.4f}")

# The reviewer confirms the first four results one by one. Verdicts go
# to an append-only journal; replaying it is last-write-wins, so a
# changed mind later simply appends a correction.
journal = JudgmentJournal(Path(tempfile.mkdtemp()) / "judgments.jsonl")
verdicts = ["true_positive", "true_positive", "true_positive", "false_positive"]
for r, verdict in zip(outcome.results, verdicts):
    journal.append(Judgment(outcome.query_id, r.image_id, verdict, judge="demo"))

ranked = [r.image_id for r in outcome.results]
curve = cumulative_tp_curve(ranked, journal.verdicts_for(outcome.query_id), 6)
print(f"\ncumulative true positives: {curve}")
print("(unjudged results never count; rank 5 and 6 stay flat)")

# Compare against a weaker ordering of the same judged set, cut at
# rank 4: the delta is how many more confirmed hits the reference had
# found by then.
weaker = ["road_c", "road_e", "road_a", "road_f", "road_b", "road_d"]
verdict_map = journal.verdicts_for(outcome.query_id)
report = compare_methods(
    {
        "ours": cumulative_tp_curve(ranked, verdict_map, 4),
        "shuffled": cumulative_tp_curve(weaker, verdict_map, 4),
    }
)
print(f"\nby rank 4, ours:     {report.final_tp_mean['ours']:.0f} confirmed")
print(f"by rank 4, shuffled: {report.final_tp_mean['shuffled']:.0f} confirmed")
print(f"delta at rank 4:     {report.final_delta['shuffled']:+.0f}")
