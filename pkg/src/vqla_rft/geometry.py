"""Boxes, frame dimensions and the four-quadrant partition of a frame."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import DegenerateBox, OutOfFrame


class Quadrant(str, enum.Enum):
    LT = "LT"
    RT = "RT"
    LB = "LB"
    RB = "RB"

    @property
    def term(self) -> str:
        """Answer-vocabulary spelling, e.g. ``left-top``."""
        return _TERMS[self]

    @classmethod
    def from_term(cls, term: str) -> "Quadrant":
        return _FROM_TERMS[term]

    @property
    def index(self) -> int:
        return _ORDER.index(self)


_ORDER = (Quadrant.LT, Quadrant.RT, Quadrant.LB, Quadrant.RB)
_TERMS = {
    Quadrant.LT: "left-top",
    Quadrant.RT: "right-top",
    Quadrant.LB: "left-bottom",
    Quadrant.RB: "right-bottom",
}
_FROM_TERMS = {v: k for k, v in _TERMS.items()}
QUADRANTS = _ORDER


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box on half-open intervals ``[x1, x2) x [y1, y2)``, origin top-left.

    Construction does not validate; :meth:`check` does, so that callers can
    decide how a malformed box is reported.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    @classmethod
    def from_list(cls, coords) -> "BoundingBox":
        x1, y1, x2, y2 = coords
        return cls(x1, y1, x2, y2)

    def to_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def is_valid(self) -> bool:
        return self.x1 < self.x2 and self.y1 < self.y2

    def check(self) -> "BoundingBox":
        if not self.is_valid:
            raise DegenerateBox(f"degenerate box {self.to_list()}: need x1 < x2 and y1 < y2")
        return self

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def within(self, dims: ImageDims) -> bool:
        return 0 <= self.x1 and 0 <= self.y1 and self.x2 <= dims.width and self.y2 <= dims.height


def iou(b: BoundingBox, b_pred: BoundingBox) -> float:
    """Intersection over union with exact integer area arithmetic."""
    b.check()
    b_pred.check()
    iw = min(b.x2, b_pred.x2) - max(b.x1, b_pred.x1)
    ih = min(b.y2, b_pred.y2) - max(b.y1, b_pred.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (b.area + b_pred.area - inter)


def quadrant_of(center: tuple[float, float], dims: ImageDims) -> Quadrant:
    """Quadrant of a point; the right and bottom halves own the midlines."""
    x, y = center
    if not (0 <= x <= dims.width and 0 <= y <= dims.height):
        raise OutOfFrame(f"point ({x}, {y}) outside {dims.width}x{dims.height} frame")
    right = x >= dims.width / 2
    bottom = y >= dims.height / 2
    if bottom:
        return Quadrant.RB if right else Quadrant.LB
    return Quadrant.RT if right else Quadrant.LT
