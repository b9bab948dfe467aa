"""Rule-based rewards: visual grounding, linguistic answer, multimodal coherence."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .dataset import DatasetRecord, QuestionType
from .geometry import BoundingBox, ImageDims, Quadrant, iou, quadrant_of
from .parsing import ParsedTrace, normalize_answer


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.5
    w_vg: float = 1.0
    w_la: float = 1.0
    w_mc: float = 1.0

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        weights = (self.w_vg, self.w_la, self.w_mc)
        if min(weights) < 0 or max(weights) <= 0:
            raise ValueError(f"weights must be >= 0 with at least one > 0, got {weights}")


@dataclass(frozen=True)
class RewardBreakdown:
    r_vg: float
    r_la: float
    r_mc: float
    composite: float
    applies_vg: bool
    applies_la: bool
    applies_mc: bool
    max_composite: float

    def to_json(self) -> dict:
        return asdict(self)


def vg_reward(b: BoundingBox, b_pred: BoundingBox | None, tau: float) -> float:
    """IoU when it clears ``tau`` (inclusive), else 0. No prediction scores 0."""
    if b_pred is None:
        return 0.0
    overlap = iou(b, b_pred)
    return overlap if overlap >= tau else 0.0


def la_reward(answer: str, answer_pred: str | None) -> float:
    if answer_pred is None:
        return 0.0
    return 1.0 if normalize_answer(answer) == normalize_answer(answer_pred) else 0.0


def mc_reward(b_pred: BoundingBox | None, q_inferred: Quadrant | None, dims: ImageDims) -> float:
    """1 iff the predicted box centre lies in the quadrant the reasoning claims."""
    if b_pred is None or q_inferred is None or not b_pred.is_valid:
        return 0.0
    cx, cy = b_pred.center
    if not (0 <= cx <= dims.width and 0 <= cy <= dims.height):
        return 0.0
    return 1.0 if quadrant_of((cx, cy), dims) is q_inferred else 0.0


def composite_reward(trace: ParsedTrace, truth: DatasetRecord, cfg: RewardConfig,
                     dims: ImageDims) -> RewardBreakdown:
    applies_vg = truth.bbox is not None
    applies_mc = truth.question_type is QuestionType.INSTRUMENT_LOCATION or truth.bbox is not None

    r_la = la_reward(truth.answer, trace.answer)
    r_vg = vg_reward(truth.bbox, trace.bbox, cfg.tau) if applies_vg else 0.0
    r_mc = mc_reward(trace.bbox, trace.q_inferred, dims) if applies_mc else 0.0

    composite = cfg.w_la * r_la
    max_composite = cfg.w_la
    if applies_vg:
        composite += cfg.w_vg * r_vg
        max_composite += cfg.w_vg
    if applies_mc:
        composite += cfg.w_mc * r_mc
        max_composite += cfg.w_mc
    return RewardBreakdown(r_vg, r_la, r_mc, composite, applies_vg, True, applies_mc, max_composite)
