"""Turn sub-answers into chains of thought and sub-QA records."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from ..dataset import CoTChain, DatasetRecord, QuestionType, RecordKind, Stage, record_id, validate_record
from ..errors import MissingSlot
from .client import SubAnswerSet
from .prompts import LabelledBox, PromptPack

# wraps the joined sub-answers of each stage
CONNECTIVES = {
    Stage.PLANNING: "To answer this, I will proceed step by step. {body}",
    Stage.PRINCIPLE: "Key principle: {body}",
    Stage.VISUAL_ANALYSIS: "Looking at the frame: {body}",
    Stage.COMPARISON: "Comparing the candidates: {body}",
    Stage.CONTACT_ANALYSIS: "Checking tool-tissue contact: {body}",
    Stage.CONCLUSION: "Therefore, {body}",
}
VISUAL_STAGES = (Stage.VISUAL_ANALYSIS, Stage.CONTACT_ANALYSIS)


class IdAllocator:
    """Hands out ``{image_id}#{kind}#{ordinal}`` ids, ordinals counting per image and kind."""

    def __init__(self):
        self._next: Counter = Counter()

    def __call__(self, image_id: str, kind: RecordKind) -> str:
        key = (image_id, kind)
        ordinal = self._next[key]
        self._next[key] += 1
        return record_id(image_id, kind, ordinal)


def _answer(answers: SubAnswerSet, slot: str) -> str:
    try:
        return answers.answers[slot]
    except KeyError:
        raise MissingSlot(f"no sub-answer for slot {slot}", slot=slot) from None


def assemble_cot(answers: SubAnswerSet, pack: PromptPack) -> CoTChain:
    """Join sub-answers stage by stage, in canonical stage order."""
    stages = []
    for stage in pack.stages:
        body = " ".join(" ".join(_answer(answers, q.slot).split()) for q in pack.by_stage(stage))
        stages.append((stage, CONNECTIVES[stage].format(body=body)))
    return CoTChain(tuple(stages))


def compile_qa_pairs(answers: SubAnswerSet, pack: PromptPack,
                     boxes: Sequence[LabelledBox] | None = None,
                     ids: IdAllocator | None = None) -> list[DatasetRecord]:
    """Visual sub-questions become VisualQA records, labelled boxes GroundingQA records."""
    ids = ids or IdAllocator()
    boxes = pack.context if boxes is None else boxes
    out = []
    for sub in pack.sub_questions:
        if sub.stage in VISUAL_STAGES:
            out.append(DatasetRecord(ids(pack.image_id, RecordKind.VISUAL_QA), RecordKind.VISUAL_QA,
                                     pack.image_id, sub.prompt, QuestionType.VISUAL_SUB,
                                     _answer(answers, sub.slot).strip()))
    for box in boxes:
        out.append(DatasetRecord(ids(pack.image_id, RecordKind.GROUNDING_QA), RecordKind.GROUNDING_QA,
                                 pack.image_id, f"Where is the {box.label} in the frame?",
                                 QuestionType.GROUNDING_SUB, box.label, box.bbox))
    return out


def compile_records(answers: SubAnswerSet, pack: PromptPack,
                    ids: IdAllocator | None = None) -> list[DatasetRecord]:
    """The CoT record for the pack's question followed by its sub-QA records, all validated."""
    ids = ids or IdAllocator()
    cot = DatasetRecord(ids(pack.image_id, RecordKind.COT), RecordKind.COT, pack.image_id,
                        pack.question, pack.question_type, pack.answer, pack.bbox,
                        assemble_cot(answers, pack))
    records = [cot, *compile_qa_pairs(answers, pack, ids=ids)]
    for r in records:
        validate_record(r.to_json())
    return records
