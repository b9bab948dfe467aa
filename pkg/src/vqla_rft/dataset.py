"""Record schema, validation, SFT/RFT splitting, statistics and JSONL export.

A dataset is a flat JSONL file; each line is one record with the fields
``id, kind, image_id, question, question_type, answer, bbox, cot`` in that
order.  ``bbox`` is ``[x1, y1, x2, y2]`` in integer pixels or ``null``;
``cot`` is a list of ``{"stage", "text"}`` objects or ``null``.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BadStageOrder,
    BoxOutOfFrame,
    EmptyAnswer,
    EmptyDataset,
    InvalidField,
    IoFailure,
    MissingField,
)
from .geometry import BoundingBox, ImageDims

FIELDS = ("id", "kind", "image_id", "question", "question_type", "answer", "bbox", "cot")
REQUIRED = ("id", "kind", "image_id", "question", "question_type", "answer")

# Published composition of the full 54k release, kept for reference only.
# The Visual-QA total differs between two places in the source (33,324 vs 33,342).
PUBLISHED_COUNTS = {"cot": 12_255, "grounding_qa": 8_902, "visual_qa": (33_324, 33_342)}
# EndoVis-18 video sequences held out as the test split.
ENDOVIS18_TEST_SEQUENCES = (1, 5, 16)


class RecordKind(str, enum.Enum):
    COT = "CoT"
    VISUAL_QA = "VisualQA"
    GROUNDING_QA = "GroundingQA"


class QuestionType(str, enum.Enum):
    ORGAN = "Organ"
    INSTRUMENT_LOCATION = "InstrumentLocation"
    INSTRUMENT_STATE = "InstrumentState"
    VISUAL_SUB = "VisualSub"
    GROUNDING_SUB = "GroundingSub"


class Stage(str, enum.Enum):
    PLANNING = "Planning"
    PRINCIPLE = "Principle"
    VISUAL_ANALYSIS = "VisualAnalysis"
    COMPARISON = "Comparison"
    CONTACT_ANALYSIS = "ContactAnalysis"
    CONCLUSION = "Conclusion"


STAGE_ORDER = tuple(Stage)


@dataclass(frozen=True)
class CoTChain:
    stages: tuple[tuple[Stage, str], ...]

    @property
    def labels(self) -> tuple[Stage, ...]:
        return tuple(s for s, _ in self.stages)

    def text_of(self, stage: Stage) -> str | None:
        for s, text in self.stages:
            if s is stage:
                return text
        return None

    def to_json(self) -> list[dict[str, str]]:
        return [{"stage": s.value, "text": t} for s, t in self.stages]


def check_stage_order(labels: Sequence[Stage], question_type: QuestionType | None = None,
                      record_id: str | None = None) -> None:
    """Raise :class:`BadStageOrder` unless ``labels`` is a valid chain layout."""
    if not labels:
        raise BadStageOrder("chain has no stages", record_id, "cot")
    positions = [STAGE_ORDER.index(s) for s in labels]
    if any(b <= a for a, b in zip(positions, positions[1:])):
        order = " > ".join(s.value for s in labels)
        raise BadStageOrder(f"stages out of canonical order: {order}", record_id, "cot")
    if labels[-1] is not Stage.CONCLUSION:
        raise BadStageOrder("Conclusion must be the final stage", record_id, "cot")
    if (Stage.CONTACT_ANALYSIS in labels and question_type is not None
            and question_type is not QuestionType.INSTRUMENT_STATE):
        raise BadStageOrder(
            f"ContactAnalysis only allowed for InstrumentState, not {question_type.value}",
            record_id, "cot")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    kind: RecordKind
    image_id: str
    question: str
    question_type: QuestionType
    answer: str
    bbox: BoundingBox | None = None
    cot: CoTChain | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "image_id": self.image_id,
            "question": self.question,
            "question_type": self.question_type.value,
            "answer": self.answer,
            "bbox": self.bbox.to_list() if self.bbox is not None else None,
            "cot": self.cot.to_json() if self.cot is not None else None,
        }


def record_id(image_id: str, kind: RecordKind | str, ordinal: int) -> str:
    kind = RecordKind(kind)
    return f"{image_id}#{kind.value}#{ordinal}"


@dataclass
class DatasetStats:
    n_cot: int = 0
    n_visual_qa: int = 0
    n_grounding_qa: int = 0
    by_question_type: dict[str, int] = field(default_factory=dict)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.n_cot, self.n_visual_qa, self.n_grounding_qa)

    def to_json(self) -> dict[str, Any]:
        return {
            "n_cot": self.n_cot,
            "n_visual_qa": self.n_visual_qa,
            "n_grounding_qa": self.n_grounding_qa,
            "by_question_type": dict(sorted(self.by_question_type.items())),
        }


# --- validation --------------------------------------------------------------

def _enum(cls, value, rid, name):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise InvalidField(f"{name}={value!r} not one of: {allowed}", rid, name) from None


def _coerce_box(raw, rid, dims: ImageDims | None) -> BoundingBox:
    if (not isinstance(raw, list) or len(raw) != 4
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw)):
        raise InvalidField(f"bbox must be a list of 4 integers, got {raw!r}", rid, "bbox")
    box = BoundingBox.from_list(raw)
    if not box.is_valid:
        raise InvalidField(f"bbox {raw} is degenerate (need x1 < x2, y1 < y2)", rid, "bbox")
    if box.x1 < 0 or box.y1 < 0:
        raise BoxOutOfFrame(f"bbox {raw} has negative coordinates", rid, "bbox")
    if dims is not None and not box.within(dims):
        raise BoxOutOfFrame(f"bbox {raw} exceeds {dims.width}x{dims.height} frame", rid, "bbox")
    return box


def _coerce_cot(raw, rid, qtype) -> CoTChain:
    if not isinstance(raw, list):
        raise InvalidField("cot must be a list of {stage, text} objects", rid, "cot")
    stages = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "stage" not in item or "text" not in item:
            raise MissingField(f"cot[{i}] needs 'stage' and 'text'", rid, "cot")
        stage = _enum(Stage, item["stage"], rid, f"cot[{i}].stage")
        if not isinstance(item["text"], str):
            raise InvalidField(f"cot[{i}].text must be a string", rid, "cot")
        stages.append((stage, item["text"]))
    check_stage_order([s for s, _ in stages], qtype, rid)
    return CoTChain(tuple(stages))


def validate_record(raw: Any, dims: ImageDims | None = None, require_cot: bool = True) -> DatasetRecord:
    """Turn a parsed JSON object into a :class:`DatasetRecord` or raise.

    ``dims`` enables the in-frame check on ``bbox``.  ``require_cot=False``
    accepts CoT records whose rationale was stripped (RFT exports).
    """
    from .parsing import normalize_answer

    if not isinstance(raw, dict):
        raise InvalidField(f"record must be a JSON object, got {type(raw).__name__}")
    rid = raw.get("id") if isinstance(raw.get("id"), str) else None
    for name in REQUIRED:
        if name not in raw or raw[name] is None:
            raise MissingField(f"missing required field '{name}'", rid, name)
    for name in ("id", "image_id", "question", "answer"):
        if not isinstance(raw[name], str):
            raise InvalidField(f"{name} must be a string", rid, name)

    kind = _enum(RecordKind, raw["kind"], rid, "kind")
    qtype = _enum(QuestionType, raw["question_type"], rid, "question_type")
    if not normalize_answer(raw["answer"]):
        raise EmptyAnswer("answer is empty after normalization", rid, "answer")

    raw_box = raw.get("bbox")
    if kind is RecordKind.GROUNDING_QA and raw_box is None:
        raise MissingField("GroundingQA record requires 'bbox'", rid, "bbox")
    if kind is RecordKind.VISUAL_QA and raw_box is not None:
        raise MissingField("VisualQA record must not carry 'bbox'", rid, "bbox")
    box = _coerce_box(raw_box, rid, dims) if raw_box is not None else None

    raw_cot = raw.get("cot")
    if kind is RecordKind.COT:
        if raw_cot is None or raw_cot == []:
            if require_cot:
                raise MissingField("CoT record requires a non-empty 'cot'", rid, "cot")
            raw_cot = None
    elif raw_cot is not None:
        raise InvalidField(f"{kind.value} record must not carry 'cot'", rid, "cot")
    cot = _coerce_cot(raw_cot, rid, qtype) if raw_cot is not None else None

    return DatasetRecord(raw["id"], kind, raw["image_id"], raw["question"], qtype,
                         raw["answer"], box, cot)


# --- IO ----------------------------------------------------------------------

def dumps_line(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def iter_jsonl(path: str | Path) -> Iterable[tuple[int, Any]]:
    """Yield ``(line_number, parsed_object)``; blank lines are skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InvalidField(f"{path}:{lineno}: not valid JSON ({exc.msg})") from None
                yield lineno, obj
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from exc


def load_records(path: str | Path, dims: ImageDims | None = None,
                 require_cot: bool = True) -> list[DatasetRecord]:
    return [validate_record(obj, dims, require_cot) for _, obj in iter_jsonl(path)]


def write_jsonl(rows: Iterable[dict[str, Any]], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(dumps_line(row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from exc


class ExportStage(str, enum.Enum):
    SFT = "SFT"
    RFT = "RFT"


def export_row(record: DatasetRecord, stage: ExportStage | str) -> dict[str, Any]:
    row = record.to_json()
    if ExportStage(stage) is ExportStage.RFT:
        row["cot"] = None
    return row


def export_training_file(records: Sequence[DatasetRecord], stage: ExportStage | str,
                         path: str | Path) -> None:
    """Write one record per line. RFT lines drop the reference rationale."""
    stage = ExportStage(stage)
    write_jsonl((export_row(r, stage) for r in records), path)


# --- split & stats -----------------------------------------------------------

def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def sequence_of(image_id: str) -> str:
    """Video-sequence key of an image id such as ``seq_5/frame012``."""
    return image_id.split("/", 1)[0]


def split_dataset(records: Sequence[DatasetRecord], sft_fraction: float = 0.8, seed: int = 0,
                  group_key: Callable[[DatasetRecord], str] | None = None,
                  ) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Partition records into (SFT, RFT) sets.

    Every non-CoT record goes to SFT.  CoT records (or groups of them, when
    ``group_key`` is given) are shuffled with a PCG64 stream seeded from
    ``seed`` and the first ``round_half_up(sft_fraction * n)`` go to SFT.
    Both outputs keep the input order.
    """
    if not 0 < sft_fraction < 1:
        raise ValueError(f"sft_fraction must be in (0, 1), got {sft_fraction}")
    if not records:
        raise EmptyDataset("cannot split an empty dataset")

    cot_idx = [i for i, r in enumerate(records) if r.kind is RecordKind.COT]
    key = group_key or (lambda r: r.id)
    units = sorted({key(records[i]) for i in cot_idx})
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(units))
    n_sft = round_half_up(sft_fraction * len(units))
    sft_units = {units[j] for j in order[:n_sft]}

    sft, rft = [], []
    for i, rec in enumerate(records):
        if rec.kind is RecordKind.COT and key(rec) not in sft_units:
            rft.append(rec)
        else:
            sft.append(rec)
    return sft, rft


def dataset_stats(records: Iterable[DatasetRecord]) -> DatasetStats:
    kinds: Counter = Counter()
    qtypes: Counter = Counter()
    for r in records:
        kinds[r.kind] += 1
        qtypes[r.question_type.value] += 1
    return DatasetStats(
        n_cot=kinds[RecordKind.COT],
        n_visual_qa=kinds[RecordKind.VISUAL_QA],
        n_grounding_qa=kinds[RecordKind.GROUNDING_QA],
        by_question_type=dict(qtypes),
    )


def exclude_sequences(records: Iterable[DatasetRecord],
                      sequences: Iterable[int] = ENDOVIS18_TEST_SEQUENCES) -> list[DatasetRecord]:
    """Drop records whose image id starts with ``seq_<n>/`` for a held-out ``n``."""
    held_out = {f"seq_{n}" for n in sequences}
    return [r for r in records if sequence_of(r.image_id) not in held_out]
