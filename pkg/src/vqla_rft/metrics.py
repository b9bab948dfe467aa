"""Accuracy, macro F-score and mean IoU of a predictions file against ground truth."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .dataset import DatasetRecord, iter_jsonl, load_records
from .errors import EmptyInput, IdMismatch, InvalidField, MissingField
from .geometry import BoundingBox, iou
from .parsing import normalize_answer

AVERAGING = "macro over ground-truth classes; classes with P + R = 0 score 0"

# Published Surgery-R1 results, for reference only (not reproduced at desk scale).
REFERENCE_RESULTS = {
    "EndoVis-18": {"acc": 0.7356, "f_score": 0.4576, "miou": 0.8721},
    "EndoVis-17": {"acc": 0.5672, "f_score": 0.4422, "miou": 0.8422},
}


def _norm(answer: str | None) -> str | None:
    return None if answer is None else normalize_answer(answer)


def _require(pairs: Sequence) -> None:
    if not pairs:
        raise EmptyInput("no records to evaluate")


def accuracy(pairs: Sequence[tuple[str | None, str]]) -> float:
    """Fraction of ``(predicted, truth)`` answers that match after normalization."""
    _require(pairs)
    return sum(_norm(p) == _norm(t) for p, t in pairs) / len(pairs)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int

    def to_json(self) -> dict[str, Any]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "support": self.support}


def class_scores(pairs: Sequence[tuple[str | None, str]]) -> dict[str, ClassScore]:
    """Per-class precision/recall/F1 for every class that occurs in the truths."""
    _require(pairs)
    norm = [(_norm(p), _norm(t)) for p, t in pairs]
    tp, pred_n, true_n = Counter(), Counter(), Counter()
    for p, t in norm:
        true_n[t] += 1
        pred_n[p] += 1
        if p == t:
            tp[t] += 1
    out = {}
    for c in sorted(true_n):
        prec = tp[c] / pred_n[c] if pred_n[c] else 0.0
        rec = tp[c] / true_n[c]
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = ClassScore(prec, rec, f1, true_n[c])
    return out


def macro_fscore(pairs: Sequence[tuple[str | None, str]]) -> float:
    scores = class_scores(pairs)
    return math.fsum(s.f1 for s in scores.values()) / len(scores)


def mean_iou(pairs: Sequence[tuple[BoundingBox | None, BoundingBox]]) -> float:
    """Mean IoU of ``(predicted, truth)`` boxes; a missing prediction scores 0."""
    _require(pairs)
    return math.fsum(iou(t, p) if p is not None else 0.0 for p, t in pairs) / len(pairs)


@dataclass
class EvalReport:
    acc: float
    f_score: float
    miou: float | None
    n: int
    n_boxed: int
    per_class: dict[str, ClassScore] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "acc": self.acc,
            "f_score": self.f_score,
            "miou": self.miou,
            "n": self.n,
            "n_boxed": self.n_boxed,
            "f_score_averaging": AVERAGING,
            "per_class": {c: s.to_json() for c, s in self.per_class.items()},
            "reference_results": REFERENCE_RESULTS,
        }


@dataclass(frozen=True)
class Prediction:
    id: str
    answer: str | None
    bbox: BoundingBox | None


def _pred_box(raw) -> BoundingBox | None:
    """A malformed predicted box counts as missing."""
    if (isinstance(raw, list) and len(raw) == 4
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)):
        box = BoundingBox.from_list(raw)
        if box.is_valid:
            return box
    return None


def load_predictions(path: str | Path) -> list[Prediction]:
    out = []
    for lineno, raw in iter_jsonl(path):
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
            raise MissingField(f"{path}:{lineno}: prediction needs a string 'id'", None, "id")
        answer = raw.get("answer")
        if answer is not None and not isinstance(answer, str):
            raise InvalidField("answer must be a string or null", raw["id"], "answer")
        out.append(Prediction(raw["id"], answer, _pred_box(raw.get("bbox"))))
    return out


def _index(ids: Iterable[str], what: str) -> None:
    seen: Counter = Counter(ids)
    dupes = sorted(k for k, v in seen.items() if v > 1)
    if dupes:
        raise InvalidField(f"duplicate {what} ids: {', '.join(dupes[:5])}", dupes[0], "id")


def evaluate(predictions: Sequence[Prediction], truths: Sequence[DatasetRecord]) -> EvalReport:
    """Join on id and compute all three metrics.  mIoU covers records whose truth has a box."""
    _index((p.id for p in predictions), "prediction")
    _index((t.id for t in truths), "ground-truth")
    by_id = {p.id: p for p in predictions}
    gt_ids = {t.id for t in truths}
    missing = sorted(gt_ids - by_id.keys())
    unknown = sorted(by_id.keys() - gt_ids)
    if missing or unknown:
        raise IdMismatch(missing, unknown)
    _require(truths)

    answers = [(by_id[t.id].answer, t.answer) for t in truths]
    boxes = [(by_id[t.id].bbox, t.bbox) for t in truths if t.bbox is not None]
    return EvalReport(
        acc=accuracy(answers),
        f_score=macro_fscore(answers),
        miou=mean_iou(boxes) if boxes else None,
        n=len(truths),
        n_boxed=len(boxes),
        per_class=class_scores(answers),
    )


def eval_report(pred_path: str | Path, gt_path: str | Path) -> EvalReport:
    return evaluate(load_predictions(pred_path), load_records(gt_path, require_cot=False))
