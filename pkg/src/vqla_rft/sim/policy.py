"""Linear softmax policy with independent categorical heads.

Parameters are one matrix ``W`` of shape ``(sum(head_sizes), n_features)``;
head ``h`` owns a contiguous block of rows.  At temperature ``T`` head ``h``
samples from ``softmax(W_h f / T)`` and the joint log-probability of an action
is the sum of the per-head log-probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, OutOfSupport
from ..geometry import QUADRANTS, BoundingBox, Quadrant
from .scene import SCENE_QUESTION_TYPES, AnchorGrid, Question, SceneSpec, Vocab


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def categorical_logprob_grad(weights: np.ndarray, features: np.ndarray, index: int,
                             temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """``log softmax(W f / T)[index]`` and its gradient with respect to ``W``."""
    logp = log_softmax(weights @ features / temperature)
    if not 0 <= index < logp.shape[0]:
        raise OutOfSupport(f"index {index} outside head of size {logp.shape[0]}")
    score = -np.exp(logp)
    score[index] += 1.0
    return float(logp[index]), np.outer(score, features) / temperature


class CategoricalHeads:
    def __init__(self, head_sizes: Sequence[int], n_features: int):
        self.head_sizes = tuple(int(s) for s in head_sizes)
        self.n_features = int(n_features)
        bounds = np.cumsum((0,) + self.head_sizes)
        self.slices = tuple(slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))

    @property
    def shape(self) -> tuple[int, int]:
        return (sum(self.head_sizes), self.n_features)

    def init_params(self, scale: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
        if scale == 0.0:
            return np.zeros(self.shape)
        return scale * rng.standard_normal(self.shape)

    def _check(self, params: np.ndarray, features: np.ndarray) -> None:
        if params.shape != self.shape or features.shape != (self.n_features,):
            raise DimensionMismatch(
                f"params {params.shape} / features {features.shape} do not fit heads {self.shape}")

    def head_logprobs(self, params: np.ndarray, features: np.ndarray, temperature: float) -> list[np.ndarray]:
        self._check(params, features)
        return [log_softmax(params[s] @ features / temperature) for s in self.slices]

    def sample_indices(self, params, features, temperature, rng: np.random.Generator,
                       ) -> tuple[tuple[int, ...], float]:
        idx, total = [], 0.0
        for lp in self.head_logprobs(params, features, temperature):
            cdf = np.cumsum(np.exp(lp))
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
            idx.append(i)
            total += float(lp[i])
        return tuple(idx), total

    def logprob(self, params, features, indices: Sequence[int], temperature: float = 1.0) -> float:
        lps = self.head_logprobs(params, features, temperature)
        self._support(indices)
        return float(sum(lp[i] for lp, i in zip(lps, indices)))

    def _support(self, indices: Sequence[int]) -> None:
        if len(indices) != len(self.head_sizes) or any(
                not 0 <= i < n for i, n in zip(indices, self.head_sizes)):
            raise OutOfSupport(f"action {tuple(indices)} outside heads {self.head_sizes}")

    def logprob_grad(self, params, features, indices: Sequence[int], temperature: float = 1.0,
                     ) -> tuple[float, np.ndarray]:
        self._check(params, features)
        self._support(indices)
        grad = np.zeros(self.shape)
        total = 0.0
        for s, i in zip(self.slices, indices):
            lp, g = categorical_logprob_grad(params[s], features, i, temperature)
            total += lp
            grad[s] = g
        return total, grad


@dataclass(frozen=True)
class RolloutAction:
    answer: str
    stated: Quadrant
    anchor: int
    box: BoundingBox
    indices: tuple[int, int, int]
    logp: float


class ToyPolicy(CategoricalHeads):
    """Answer / stated-quadrant / box-anchor heads over one-hot scene features.

    Feature layout: ``[bias | question type | target quadrant | target cell |
    target state | organ]``.

    The anchor head is one categorical over ``4 * k*k`` anchors whose logits
    are ``u[quadrant] + v[cell]``.  Its parameter block is therefore ``4 + k*k``
    rows, and because softmax of a sum factorizes it is stored as two internal
    heads (anchor quadrant, anchor cell) whose log-probabilities add up.
    """

    def __init__(self, vocab: Vocab, grid: AnchorGrid):
        self.vocab, self.grid = vocab, grid
        self.answers = vocab.answers
        self._answer_index = {a: i for i, a in enumerate(self.answers)}
        sizes = [1, len(SCENE_QUESTION_TYPES), 4, grid.n_cells, len(vocab.states), len(vocab.organs)]
        self._offsets = np.cumsum([0] + sizes[:-1])
        super().__init__((len(self.answers), 4, 4, grid.n_cells), sum(sizes))

    def encode(self, scene: SceneSpec, question: Question) -> np.ndarray:
        f = np.zeros(self.n_features)
        o_bias, o_qt, o_quad, o_cell, o_state, o_organ = self._offsets
        t = question.target
        f[o_bias] = 1.0
        f[o_qt + SCENE_QUESTION_TYPES.index(question.question_type)] = 1.0
        f[o_quad + t.quadrant.index] = 1.0
        f[o_cell + t.cell] = 1.0
        if t.state is not None:
            f[o_state + self.vocab.states.index(t.state)] = 1.0
        f[o_organ + self.vocab.organs.index(scene.organ.name)] = 1.0
        return f

    def head_indices(self, action: "RolloutAction | Sequence[int]") -> tuple[int, int, int, int]:
        a, q, anchor = getattr(action, "indices", action)
        aq, cell = divmod(int(anchor), self.grid.n_cells)
        return int(a), int(q), aq, cell

    def action(self, indices: Sequence[int], logp: float) -> RolloutAction:
        a, q, b = (int(i) for i in indices)
        return RolloutAction(self.answers[a], QUADRANTS[q], b, self.grid.box(b), (a, q, b), logp)

    def action_for(self, answer: str, stated: Quadrant, anchor: int, params=None, features=None,
                   temperature: float = 1.0) -> RolloutAction:
        if answer not in self._answer_index:
            raise OutOfSupport(f"answer {answer!r} not in vocabulary")
        if not 0 <= anchor < len(self.grid):
            raise OutOfSupport(f"anchor {anchor} outside grid of {len(self.grid)}")
        idx = (self._answer_index[answer], stated.index, anchor)
        logp = 0.0 if params is None else self.action_logprob(params, features, idx, temperature)
        return self.action(idx, logp)

    def distributions(self, params, features, temperature: float) -> list[np.ndarray]:
        """Log-probabilities of the three action heads; the anchor head is 64-way."""
        la, lq, lu, lv = self.head_logprobs(params, features, temperature)
        return [la, lq, (lu[:, None] + lv[None, :]).ravel()]

    def action_logprob(self, params, features, action, temperature: float = 1.0) -> float:
        return self.logprob(params, features, self.head_indices(action), temperature)

    def action_logprob_grad(self, params, features, action, temperature: float = 1.0):
        return self.logprob_grad(params, features, self.head_indices(action), temperature)

    def sample(self, params: np.ndarray, features: np.ndarray, temperature: float,
               rng: np.random.Generator, n: int = 1) -> list[RolloutAction]:
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        out = []
        for _ in range(n):
            (a, q, aq, cell), logp = self.sample_indices(params, features, temperature, rng)
            out.append(self.action((a, q, aq * self.grid.n_cells + cell), logp))
        return out


class BoundPolicy:
    """Adapter exposing ``logprob_grad(output)`` at fixed params/features/temperature."""

    def __init__(self, heads: CategoricalHeads, params: np.ndarray, features: np.ndarray,
                 temperature: float = 1.0):
        self.heads, self.params, self.features, self.temperature = heads, params, features, temperature

    def _indices(self, output):
        if isinstance(self.heads, ToyPolicy):
            return self.heads.head_indices(output)
        return getattr(output, "indices", output)

    def logprob_grad(self, output) -> tuple[float, np.ndarray]:
        return self.heads.logprob_grad(self.params, self.features, self._indices(output), self.temperature)

    def logprob(self, output) -> float:
        return self.heads.logprob(self.params, self.features, self._indices(output), self.temperature)
