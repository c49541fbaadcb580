"""Evaluation harness: zero-shot classification and cumulative-TP curves.

Relevance here comes from humans, not metrics files: verdicts accumulate in
an append-only journal and curves are recomputed from whatever has been
judged so far. An unjudged result is never counted as a true positive; the
bar is "identified without doubt", so silence counts against the method
being measured, uniformly for all methods.
"""

from __future__ import annotations

import csv
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import EmbeddingVector
from .errors import FormatError, InputError
from .retrieval import TextEncoder

TRUE_POSITIVE = "true_positive"
FALSE_POSITIVE = "false_positive"
UNJUDGED = "unjudged"
VERDICTS = (TRUE_POSITIVE, FALSE_POSITIVE, UNJUDGED)

_PLACEHOLDER = "{label}"


@dataclass(frozen=True)
class PromptTemplate:
    """A text pattern with exactly one ``{label}`` slot.

    Wording changes measurably shift accuracy, so templates are explicit
    values rather than hard-coded strings.
    """

    template: str

    def __post_init__(self) -> None:
        occurrences = self.template.count(_PLACEHOLDER)
        if occurrences != 1:
            raise InputError(
                f"template must contain the placeholder {_PLACEHOLDER!r} exactly "
                f"once, found {occurrences}"
            )

    def render(self, label: str) -> str:
        # Plain replacement, not str.format: labels and templates may
        # legitimately contain other brace characters.
        return self.template.replace(_PLACEHOLDER, label)


@dataclass(frozen=True)
class Judgment:
    """One person's verdict on one result row of one query."""

    query_id: str
    image_id: str
    verdict: str
    judge: str = ""
    ts: float = field(default_factory=time.time)

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise InputError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if not self.query_id or not self.image_id:
            raise InputError("query_id and image_id must be non-empty")


@dataclass(frozen=True)
class ClassificationOutcome:
    """Assigned label indices, one per item, plus accuracy when truth is known."""

    indices: tuple[int, ...]
    accuracy: Optional[float]


def zero_shot_classify(
    item_embeddings: Sequence[EmbeddingVector],
    labels: Sequence[str],
    template: PromptTemplate,
    encoder: TextEncoder,
    truth: Optional[Sequence[int]] = None,
) -> ClassificationOutcome:
    """Assign each item the label whose rendered prompt aligns best.

    Each prompt is encoded once regardless of item count. Ties resolve to
    the lowest label index, so the assignment is a pure function of the
    inputs. Scores enter only through the argmax: any transformation that
    preserves the per-item score order (such as scaling a prompt's text by
    a positive constant before normalization) leaves every label unchanged.
    """
    if len(labels) < 2:
        raise InputError("at least two labels are required")
    if truth is not None and len(truth) != len(item_embeddings):
        raise InputError("truth must have one entry per item")
    prompt_vecs = np.stack(
        [encoder.encode_text(template.render(label)).values for label in labels]
    )
    indices: list[int] = []
    for emb in item_embeddings:
        if emb.dim != prompt_vecs.shape[1]:
            raise InputError(
                f"item dim {emb.dim} does not match prompt dim {prompt_vecs.shape[1]}"
            )
        scores = prompt_vecs @ emb.values
        indices.append(int(np.argmax(scores)))  # first max = lowest index
    accuracy = None
    if truth is not None:
        for t in truth:
            if not 0 <= t < len(labels):
                raise InputError(f"truth index {t} outside label range")
        if indices:
            hits = sum(1 for got, want in zip(indices, truth) if got == want)
            accuracy = hits / len(indices)
        else:
            accuracy = 0.0
    return ClassificationOutcome(indices=tuple(indices), accuracy=accuracy)


def latest_verdicts(
    judgments: Union[Iterable[Judgment], Mapping[str, str]],
) -> dict[str, str]:
    """Replay judgments to a last-write-wins image_id → verdict map."""
    if isinstance(judgments, Mapping):
        return dict(judgments)
    reduced: dict[str, str] = {}
    for j in judgments:
        reduced[j.image_id] = j.verdict
    return reduced


def cumulative_tp_curve(
    ranked: Sequence[str],
    judgments: Union[Iterable[Judgment], Mapping[str, str]],
    n: int,
) -> list[int]:
    """Count of verified true positives among the first t ranks, t = 1..n.

    Unjudged and false-positive rows contribute nothing. When the ranked
    list is shorter than n, the curve continues flat: ranks that do not
    exist cannot add true positives.
    """
    if n < 1:
        raise InputError("n must be positive")
    verdicts = latest_verdicts(judgments)
    curve: list[int] = []
    total = 0
    for t in range(n):
        if t < len(ranked) and verdicts.get(ranked[t]) == TRUE_POSITIVE:
            total += 1
        curve.append(total)
    return curve


@dataclass(frozen=True)
class MethodComparison:
    """Per-rank curve deltas of a reference method against alternatives.

    ``deltas[name][t]`` is reference minus method at rank t+1, averaged
    over each method's curves; positive means the reference found more.
    """

    reference: str
    mean_curves: dict[str, list[float]]
    deltas: dict[str, list[float]]
    final_tp_mean: dict[str, float]
    final_delta: dict[str, float]


def compare_methods(
    curves: Mapping[str, Union[Sequence[int], Sequence[Sequence[int]]]],
) -> MethodComparison:
    """Compare cumulative-TP curves across methods.

    The first entry is the reference. Each method maps to one curve or to a
    list of curves (one per query), which are averaged elementwise. All
    curves must share one length.
    """
    if not curves:
        raise InputError("at least one method is required")
    mean_curves: dict[str, list[float]] = {}
    length: Optional[int] = None
    for name, value in curves.items():
        batch = _as_curve_batch(name, value)
        for c in batch:
            if length is None:
                length = len(c)
            elif len(c) != length:
                raise InputError(
                    f"curve length mismatch for {name!r}: {len(c)} vs {length}"
                )
        mean_curves[name] = np.asarray(batch, dtype=np.float64).mean(axis=0).tolist()
    reference = next(iter(curves))
    ref = np.asarray(mean_curves[reference])
    deltas = {
        name: (ref - np.asarray(curve)).tolist() for name, curve in mean_curves.items()
    }
    final_tp_mean = {name: curve[-1] for name, curve in mean_curves.items()}
    final_delta = {name: delta[-1] for name, delta in deltas.items()}
    return MethodComparison(
        reference=reference,
        mean_curves=mean_curves,
        deltas=deltas,
        final_tp_mean=final_tp_mean,
        final_delta=final_delta,
    )


def _as_curve_batch(name: str, value) -> list[list[int]]:
    seq = list(value)
    if not seq:
        raise InputError(f"method {name!r} has no curves")
    if all(isinstance(v, (int, np.integer)) for v in seq):
        return [list(map(int, seq))]
    return [list(map(int, c)) for c in seq]


def export_curve_csv(dest: Union[str, Path, IO[str]], curve: Sequence[int]) -> None:
    """Write a curve as ``rank,cumulative_tp`` rows, ranks starting at 1."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            export_curve_csv(fh, curve)
        return
    writer = csv.writer(dest)
    writer.writerow(["rank", "cumulative_tp"])
    for rank, value in enumerate(curve, start=1):
        writer.writerow([rank, int(value)])


class JudgmentJournal:
    """Append-only JSONL log of judgments with last-write-wins replay.

    The file is the source of truth; nothing is ever rewritten in place, so
    the full audit trail of changed minds survives. Appends are serialized
    through a lock; readers replay a snapshot of the file.
    """

    def __init__(self, path: Union[str, Path]):
        self._path = Path(path)
        self._lock = threading.Lock()

    @property
    def path(self) -> Path:
        return self._path

    def append(self, judgment: Judgment) -> None:
        line = json.dumps(
            {
                "query_id": judgment.query_id,
                "image_id": judgment.image_id,
                "verdict": judgment.verdict,
                "judge": judgment.judge,
                "ts": judgment.ts,
            }
        )
        with self._lock:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "a") as fh:
                fh.write(line + "\n")
                fh.flush()

    def replay(self) -> list[Judgment]:
        """All journal entries in append order."""
        if not self._path.exists():
            return []
        out: list[Judgment] = []
        with open(self._path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    out.append(
                        Judgment(
                            query_id=doc["query_id"],
                            image_id=doc["image_id"],
                            verdict=doc["verdict"],
                            judge=doc.get("judge", ""),
                            ts=float(doc.get("ts", 0.0)),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise FormatError(
                        f"{self._path}:{lineno}: malformed journal entry: {exc}"
                    )
        return out

    def verdicts_for(self, query_id: str) -> dict[str, str]:
        """Last-write-wins verdict map for one query."""
        return latest_verdicts(j for j in self.replay() if j.query_id == query_id)
