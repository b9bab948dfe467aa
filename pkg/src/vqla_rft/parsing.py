"""Parse rollout text into answer, box, stages and spatial claims.

Output grammar understood here::

    [Planning] ...
    [Principle] ...
    ...
    [Conclusion] ...
    <answer>left-top</answer>
    <box>[x1, y1, x2, y2]</box>

Stage headers are optional.  Every field is extracted independently; a field
that cannot be read is left as ``None`` rather than guessed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .dataset import CoTChain, Stage, check_stage_order
from .errors import BadStageOrder
from .geometry import BoundingBox, Quadrant

ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL | re.IGNORECASE)
BOX_RE = re.compile(r"<box>(.*?)</box>", re.DOTALL | re.IGNORECASE)
STAGE_RE = re.compile(r"^[ \t]*\[(%s)\][ \t]*" % "|".join(s.value for s in Stage), re.MULTILINE)

_H = r"(left|right)"
_V = r"(top|bottom|upper|lower)"
_SEP = r"[\s_-]*"
SPATIAL_RE = re.compile(rf"\b(?:{_H}{_SEP}{_V}|{_V}{_SEP}{_H})\b", re.IGNORECASE)

_TRAILING = ".,;:!?。 "


def normalize_answer(text: str) -> str:
    """Lowercase, collapse whitespace, strip trailing punctuation."""
    collapsed = " ".join(text.lower().split())
    return collapsed.rstrip(_TRAILING)


def _quadrant(horizontal: str, vertical: str) -> Quadrant:
    top = vertical.lower() in ("top", "upper")
    if horizontal.lower() == "left":
        return Quadrant.LT if top else Quadrant.LB
    return Quadrant.RT if top else Quadrant.RB


def extract_spatial_terms(text: str) -> list[Quadrant]:
    out = []
    for m in SPATIAL_RE.finditer(text):
        h1, v1, v2, h2 = m.groups()
        out.append(_quadrant(h1, v1) if h1 else _quadrant(h2, v2))
    return out


def parse_box(content: str) -> BoundingBox | None:
    try:
        coords = json.loads(content.strip())
    except ValueError:
        return None
    if not isinstance(coords, list) or len(coords) != 4:
        return None
    ints = []
    for v in coords:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return None
        if isinstance(v, float):
            if not v.is_integer():
                return None
            v = int(v)
        ints.append(v)
    box = BoundingBox.from_list(ints)
    if not box.is_valid or box.x1 < 0 or box.y1 < 0:
        return None
    return box


def _split_stages(reasoning: str) -> list[tuple[Stage, str]]:
    heads = list(STAGE_RE.finditer(reasoning))
    segs = []
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(reasoning)
        segs.append((Stage(m.group(1)), reasoning[m.end():end].strip()))
    return segs


@dataclass(frozen=True)
class ParsedTrace:
    reasoning_text: str
    answer: str | None
    bbox: BoundingBox | None
    spatial_mentions: tuple[Quadrant, ...] = ()
    q_inferred: Quadrant | None = None
    stages: CoTChain | None = None
    conclusion_mentions: tuple[Quadrant, ...] | None = field(default=None, repr=False)


def parse_trace(text: str) -> ParsedTrace:
    """Total parser: never raises, absent fields come back as ``None``."""
    answers = ANSWER_RE.findall(text)
    answer = normalize_answer(answers[-1]) if answers else None
    boxes = BOX_RE.findall(text)
    bbox = parse_box(boxes[-1]) if boxes else None

    reasoning = BOX_RE.sub(" ", ANSWER_RE.sub(" ", text)).strip()
    mentions = tuple(extract_spatial_terms(reasoning))

    segs = _split_stages(reasoning)
    conclusion_mentions = None
    stages = None
    if segs:
        # last Conclusion block wins if a model repeats the header
        concl = [t for s, t in segs if s is Stage.CONCLUSION]
        if concl:
            conclusion_mentions = tuple(extract_spatial_terms(concl[-1]))
        try:
            check_stage_order([s for s, _ in segs])
            stages = CoTChain(tuple(segs))
        except BadStageOrder:
            stages = None

    pool = conclusion_mentions if conclusion_mentions is not None else mentions
    q_inferred = pool[-1] if pool else None
    return ParsedTrace(reasoning, answer, bbox, mentions, q_inferred, stages, conclusion_mentions)
