"""Sub-question prompt packs built from versioned plain-text templates.

A template file ``templates/v<N>/<QuestionType>.txt`` holds a ``# system``
section followed by one ``# <Stage>`` section per reasoning stage.  Every
non-blank line inside a stage section is one sub-question; ``{question}``,
``{target}`` and ``{answer}`` are filled from the annotation.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

from ..dataset import QuestionType, Stage
from ..errors import InvalidField, MissingField, UnsupportedQuestionType
from ..geometry import BoundingBox

TEMPLATE_VERSION = 1
# question types a chain of thought is written for; sub-question types are not
SUPPORTED_TYPES = (QuestionType.ORGAN, QuestionType.INSTRUMENT_LOCATION, QuestionType.INSTRUMENT_STATE)
BASE_STAGES = (Stage.PLANNING, Stage.PRINCIPLE, Stage.VISUAL_ANALYSIS, Stage.COMPARISON, Stage.CONCLUSION)


def required_stages(question_type: QuestionType) -> tuple[Stage, ...]:
    if question_type is QuestionType.INSTRUMENT_STATE:
        return BASE_STAGES[:4] + (Stage.CONTACT_ANALYSIS, Stage.CONCLUSION)
    return BASE_STAGES


def _box(raw) -> BoundingBox:
    if not isinstance(raw, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0
                                            for v in raw):
        raise ValueError(f"box must be 4 non-negative integers, got {raw!r}")
    return BoundingBox.from_list(raw).check()


@dataclass(frozen=True)
class LabelledBox:
    label: str
    bbox: BoundingBox


@dataclass(frozen=True)
class FrameAnnotation:
    """One question about one frame, with the frame's ground-truth boxes."""

    image_id: str
    question: str
    question_type: QuestionType
    answer: str
    bbox: BoundingBox | None = None
    boxes: tuple[LabelledBox, ...] = ()
    target: str | None = None
    image: str | None = None

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "FrameAnnotation":
        where = raw.get("image_id") if isinstance(raw.get("image_id"), str) else None
        for name in ("image_id", "question", "question_type", "answer"):
            if not isinstance(raw.get(name), str):
                raise MissingField(f"annotation needs a string '{name}'", where, name)
        try:
            qtype = QuestionType(raw["question_type"])
        except ValueError:
            raise UnsupportedQuestionType(f"unknown question type {raw['question_type']!r}",
                                          image_id=where) from None
        try:
            bbox = _box(raw["bbox"]) if raw.get("bbox") is not None else None
            boxes = tuple(LabelledBox(str(b["label"]), _box(b["bbox"])) for b in raw.get("boxes") or ())
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidField(f"bad box in annotation: {exc}", where, "boxes") from None
        return cls(raw["image_id"], raw["question"], qtype, raw["answer"], bbox, boxes,
                   raw.get("target"), raw.get("image"))


@dataclass(frozen=True)
class SubQuestion:
    slot: str  # "<Stage>.<n>", 1-based within the stage
    stage: Stage
    prompt: str


@dataclass(frozen=True)
class PromptPack:
    image_id: str
    question_type: QuestionType
    system_prompt: str
    sub_questions: tuple[SubQuestion, ...]
    context: tuple[LabelledBox, ...] = ()
    question: str = ""
    answer: str = ""
    bbox: BoundingBox | None = None
    image: str | None = None
    template_version: int = TEMPLATE_VERSION

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(q.slot for q in self.sub_questions)

    @property
    def stages(self) -> tuple[Stage, ...]:
        return tuple(dict.fromkeys(q.stage for q in self.sub_questions))

    def by_stage(self, stage: Stage) -> tuple[SubQuestion, ...]:
        return tuple(q for q in self.sub_questions if q.stage is stage)

    def context_text(self) -> str:
        """Ground truth handed to the generator alongside each sub-question."""
        ctx: dict[str, Any] = {"question": self.question, "answer": self.answer}
        if self.bbox is not None:
            ctx["answer_box"] = self.bbox.to_list()
        ctx["boxes"] = [{"label": b.label, "bbox": b.bbox.to_list()} for b in self.context]
        if self.image:
            ctx["image"] = self.image
        return json.dumps(ctx, ensure_ascii=False)


@dataclass(frozen=True)
class Template:
    system: str
    sections: dict[Stage, tuple[str, ...]] = field(default_factory=dict)


def parse_template(text: str) -> Template:
    system: list[str] = []
    sections: dict[Stage, list[str]] = {}
    current: Stage | None | str = None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("# "):
            name = line[2:].strip()
            current = "system" if name == "system" else Stage(name)
            if current != "system":
                sections.setdefault(current, [])
        elif line:
            if current == "system":
                system.append(line)
            elif isinstance(current, Stage):
                sections[current].append(line)
            else:
                raise ValueError(f"template line outside any section: {line!r}")
    return Template("\n".join(system), {s: tuple(v) for s, v in sections.items()})


@lru_cache(maxsize=None)
def load_template(question_type: QuestionType, version: int = TEMPLATE_VERSION) -> Template:
    if question_type not in SUPPORTED_TYPES:
        raise UnsupportedQuestionType(f"no prompt template for question type {question_type.value}")
    path = resources.files(__package__).joinpath(f"templates/v{version}/{question_type.value}.txt")
    return parse_template(path.read_text("utf-8"))


class _Fill(string.Formatter):
    def __init__(self, values: Mapping[str, str]):
        self.values = values

    def get_value(self, key, args, kwargs):
        return self.values[key]


def build_prompt_pack(annotation: FrameAnnotation, question_type: QuestionType | str | None = None,
                      counts: Mapping[Stage | str, int] | None = None,
                      version: int = TEMPLATE_VERSION) -> PromptPack:
    """Instantiate the template for ``question_type`` against one annotation.

    ``counts`` caps the number of sub-questions taken per stage (each stage
    keeps at least one).
    """
    raw_type = annotation.question_type if question_type is None else question_type
    try:
        qtype = QuestionType(raw_type)
    except ValueError:
        raise UnsupportedQuestionType(f"unknown question type {raw_type!r}") from None
    template = load_template(qtype, version)
    caps = {Stage(k): int(v) for k, v in (counts or {}).items()}
    fill = _Fill({
        "question": annotation.question,
        "answer": annotation.answer,
        "target": annotation.target or "target",
    })

    subs = []
    for stage in required_stages(qtype):
        lines = template.sections.get(stage, ())
        if not lines:
            raise ValueError(f"template v{version}/{qtype.value} has no {stage.value} section")
        n = caps.get(stage, len(lines))
        if not 1 <= n <= len(lines):
            raise ValueError(f"{stage.value}: count {n} outside 1..{len(lines)}")
        subs += [SubQuestion(f"{stage.value}.{i}", stage, fill.format(line))
                 for i, line in enumerate(lines[:n], 1)]

    return PromptPack(annotation.image_id, qtype, template.system, tuple(subs), annotation.boxes,
                      annotation.question, annotation.answer, annotation.bbox, annotation.image, version)
