"""Synthetic surgical scenes and the questions asked about them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from ..dataset import QuestionType
from ..geometry import QUADRANTS, BoundingBox, ImageDims, Quadrant

SCENE_QUESTION_TYPES = (
    QuestionType.ORGAN,
    QuestionType.INSTRUMENT_LOCATION,
    QuestionType.INSTRUMENT_STATE,
)
MIN_MARGIN = 4


def quadrant_rect(quadrant: Quadrant, dims: ImageDims) -> tuple[int, int, int, int]:
    """Half-open pixel extent of a quadrant whose every pixel maps back to it."""
    qw, qh = dims.width // 2, dims.height // 2
    x0 = 0 if quadrant in (Quadrant.LT, Quadrant.LB) else dims.width - qw
    y0 = 0 if quadrant in (Quadrant.LT, Quadrant.RT) else dims.height - qh
    return x0, y0, x0 + qw, y0 + qh


@dataclass(frozen=True)
class Vocab:
    instruments: tuple[str, ...]
    states: tuple[str, ...]
    organs: tuple[str, ...]
    version: int = 1

    @property
    def answers(self) -> tuple[str, ...]:
        """Answer head support: quadrant terms, then states, then organs."""
        return tuple(q.term for q in QUADRANTS) + self.states + self.organs


@lru_cache(maxsize=None)
def load_vocab(version: int = 1) -> Vocab:
    raw = json.loads(resources.files(__package__).joinpath(f"vocab_v{version}.json").read_text("utf-8"))
    return Vocab(tuple(raw["instruments"]), tuple(raw["states"]), tuple(raw["organs"]), raw["version"])


class AnchorGrid:
    """``k x k`` cells per quadrant, each holding one anchor box.

    Anchor ``q * k*k + row * k + col`` sits in cell ``(row, col)`` of quadrant
    ``QUADRANTS[q]``, inset by an eighth of the cell on every side.  Scene boxes
    are anchors perturbed by at most half that inset, so they stay inside their
    cell and quadrant.
    """

    def __init__(self, dims: ImageDims, k: int = 4):
        qw, qh = dims.width // 2, dims.height // 2
        self.cell_w, self.cell_h = qw // k, qh // k
        if self.cell_w < 64 or self.cell_h < 64:
            raise ValueError(f"{dims.width}x{dims.height} frame too small for a {k}x{k} grid per quadrant")
        self.dims, self.k = dims, k
        self.inset_x, self.inset_y = self.cell_w // 8, self.cell_h // 8
        self.jitter_x, self.jitter_y = self.inset_x // 2, self.inset_y // 2
        # right/bottom quadrants start at ceil(W/2) so every centre lands on the right side of the midline
        self._origin = {
            Quadrant.LT: (0, 0),
            Quadrant.RT: (dims.width - qw, 0),
            Quadrant.LB: (0, dims.height - qh),
            Quadrant.RB: (dims.width - qw, dims.height - qh),
        }
        self._boxes = tuple(self._make(q, c) for q in QUADRANTS for c in range(k * k))

    def _make(self, quadrant: Quadrant, cell: int) -> BoundingBox:
        ox, oy = self._origin[quadrant]
        row, col = divmod(cell, self.k)
        x0, y0 = ox + col * self.cell_w, oy + row * self.cell_h
        return BoundingBox(x0 + self.inset_x, y0 + self.inset_y,
                           x0 + self.cell_w - self.inset_x, y0 + self.cell_h - self.inset_y)

    @property
    def n_cells(self) -> int:
        return self.k * self.k

    def __len__(self) -> int:
        return len(self._boxes)

    def index(self, quadrant: Quadrant, cell: int) -> int:
        return quadrant.index * self.n_cells + cell

    def box(self, anchor: int) -> BoundingBox:
        return self._boxes[anchor]

    def locate(self, anchor: int) -> tuple[Quadrant, int]:
        q, cell = divmod(anchor, self.n_cells)
        return QUADRANTS[q], cell

    def jittered(self, quadrant: Quadrant, cell: int, rng: np.random.Generator) -> BoundingBox:
        a = self.box(self.index(quadrant, cell))
        jx = rng.integers(-self.jitter_x, self.jitter_x + 1, size=2)
        jy = rng.integers(-self.jitter_y, self.jitter_y + 1, size=2)
        return BoundingBox(int(a.x1 + jx[0]), int(a.y1 + jy[0]), int(a.x2 + jx[1]), int(a.y2 + jy[1]))


@dataclass(frozen=True)
class SceneObject:
    name: str
    quadrant: Quadrant
    cell: int
    bbox: BoundingBox
    state: str | None = None


@dataclass(frozen=True)
class SceneSpec:
    dims: ImageDims
    instruments: tuple[SceneObject, ...]
    organ: SceneObject

    def check(self) -> None:
        from ..geometry import quadrant_of

        assert 1 <= len(self.instruments) <= 3, "scene needs 1-3 instruments"
        names = [i.name for i in self.instruments]
        assert len(set(names)) == len(names), "instrument types must be unique"
        for obj in (*self.instruments, self.organ):
            b = obj.bbox
            assert b.is_valid and b.within(self.dims)
            assert quadrant_of(b.center, self.dims) is obj.quadrant, f"{obj.name} outside {obj.quadrant}"
            qx0, qy0, qx1, qy1 = quadrant_rect(obj.quadrant, self.dims)
            margin = min(b.x1 - qx0, b.y1 - qy0, qx1 - b.x2, qy1 - b.y2)
            assert margin >= MIN_MARGIN, f"{obj.name} box {b.to_list()} within {margin}px of its quadrant edge"


@dataclass(frozen=True)
class Question:
    text: str
    question_type: QuestionType
    answer: str
    bbox: BoundingBox
    target: SceneObject


def sample_scene(rng: np.random.Generator, grid: AnchorGrid, vocab: Vocab | None = None) -> SceneSpec:
    vocab = vocab or load_vocab()
    n = int(rng.integers(1, 4))
    quads = rng.permutation(4)[:n]
    kinds = rng.choice(len(vocab.instruments), size=n, replace=False)
    instruments = []
    for qi, ki in zip(quads, kinds):
        q = QUADRANTS[int(qi)]
        cell = int(rng.integers(grid.n_cells))
        state = vocab.states[int(rng.integers(len(vocab.states)))]
        instruments.append(SceneObject(vocab.instruments[int(ki)], q, cell, grid.jittered(q, cell, rng), state))
    oq = QUADRANTS[int(rng.integers(4))]
    ocell = int(rng.integers(grid.n_cells))
    organ = SceneObject(vocab.organs[int(rng.integers(len(vocab.organs)))], oq, ocell,
                        grid.jittered(oq, ocell, rng))
    return SceneSpec(grid.dims, tuple(instruments), organ)


def render_question(scene: SceneSpec, rng: np.random.Generator) -> Question:
    qtype = SCENE_QUESTION_TYPES[int(rng.integers(len(SCENE_QUESTION_TYPES)))]
    if qtype is QuestionType.ORGAN:
        return Question("What organ is being operated on?", qtype, scene.organ.name,
                        scene.organ.bbox, scene.organ)
    target = scene.instruments[int(rng.integers(len(scene.instruments)))]
    if qtype is QuestionType.INSTRUMENT_LOCATION:
        return Question(f"Where is the {target.name} located?", qtype, target.quadrant.term,
                        target.bbox, target)
    return Question(f"What is the state of the {target.name}?", qtype, target.state, target.bbox, target)
