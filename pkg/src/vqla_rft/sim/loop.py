"""The sample -> emit -> parse -> reward -> GRPO update loop on synthetic scenes."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..dataset import DatasetRecord, RecordKind
from ..geometry import ImageDims
from ..grpo import GrpoConfig, RolloutGroup, grpo_gradient, kl_estimate, update_step
from ..parsing import parse_trace
from ..rewards import RewardConfig, composite_reward
from .policy import BoundPolicy, ToyPolicy
from .scene import AnchorGrid, load_vocab, render_question, sample_scene
from .traces import emit_trace

# stream tags keep scene and rollout randomness independent
_SCENE_STREAM = 0
_ROLLOUT_STREAM = 1
_WARM_STREAM = 2


@dataclass(frozen=True)
class EnvConfig:
    width: int = 1280
    height: int = 1024
    anchor_grid: int = 4
    vocab_version: int = 1
    # supervised warm start standing in for the post-SFT reference policy
    warm_start_steps: int = 0
    warm_start_lr: float = 0.5

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.width, self.height)


@dataclass
class TrainingReport:
    header: dict[str, Any]
    rows: list[dict[str, Any]] = field(default_factory=list)
    final_params: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def tail_mean(self, name: str, n: int = 200) -> float:
        return float(self.column(name)[-n:].mean())

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(r) for r in self.rows]
        return "\n".join(lines) + "\n"


def build_policy(env: EnvConfig) -> ToyPolicy:
    return ToyPolicy(load_vocab(env.vocab_version), AnchorGrid(env.dims, env.anchor_grid))


def scene_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, _SCENE_STREAM])


def rollout_rng(seed: int, iteration: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, _ROLLOUT_STREAM, index])


def warm_start(policy: ToyPolicy, params: np.ndarray, steps: int, lr: float, seed: int) -> np.ndarray:
    """Maximum-likelihood steps on the answer and anchor heads only.

    The stated-quadrant head is left untouched, so the warm policy localizes
    and answers reasonably while its spatial claims stay uninformed.
    """
    params = params.copy()
    for step in range(steps):
        rng = np.random.default_rng([seed, step, _WARM_STREAM])
        scene = sample_scene(rng, policy.grid, policy.vocab)
        question = render_question(scene, rng)
        features = policy.encode(scene, question)
        target = question.target
        anchor = policy.grid.index(target.quadrant, target.cell)
        a, _, aq, cell = policy.head_indices((policy.answers.index(question.answer), 0, anchor))
        _, grad = policy.logprob_grad(params, features, (a, 0, aq, cell))
        grad[policy.slices[1]] = 0.0
        params += lr * grad
    return params


def _fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def run_rft(env: EnvConfig, grpo: GrpoConfig, reward: RewardConfig,
            init_params: np.ndarray | None = None, ref_params: np.ndarray | None = None,
            ) -> TrainingReport:
    """Run ``grpo.iterations`` GRPO steps and return per-iteration statistics.

    The reference policy defaults to the initial policy.  Each iteration draws
    one scene and question from a stream keyed on ``(seed, iteration)`` and each
    rollout from a stream keyed on ``(seed, iteration, index)``.
    """
    policy = build_policy(env)
    dims = env.dims
    if init_params is None:
        params = warm_start(policy, policy.init_params(), env.warm_start_steps, env.warm_start_lr, grpo.seed)
    else:
        params = np.array(init_params, dtype=float)
    ref = params.copy() if ref_params is None else np.asarray(ref_params, dtype=float)
    T = grpo.temperature
    report = TrainingReport(header={
        "env": asdict(env),
        "grpo": {**asdict(grpo), "objective_mode": grpo.objective_mode.value},
        "reward": asdict(reward),
        # every synthetic question carries a box, so all three rewards apply
        "max_composite": reward.w_vg + reward.w_la + reward.w_mc,
    })

    for it in range(grpo.iterations):
        rng = scene_rng(grpo.seed, it)
        scene = sample_scene(rng, policy.grid, policy.vocab)
        question = render_question(scene, rng)
        features = policy.encode(scene, question)
        truth = DatasetRecord(f"sim#{it}", RecordKind.COT, f"sim/{it}", question.text,
                              question.question_type, question.answer, question.bbox)

        actions = [policy.sample(params, features, T, rollout_rng(grpo.seed, it, i))[0]
                   for i in range(grpo.group_size)]
        scored = [composite_reward(parse_trace(emit_trace(a, scene)), truth, reward, dims)
                  for a in actions]

        logp_old = np.array([a.logp for a in actions])
        logp_ref = np.array([policy.action_logprob(ref, features, a, T) for a in actions])
        group = RolloutGroup(logp_old, logp_old, logp_ref, [s.composite for s in scored],
                             outputs=actions)
        kl = kl_estimate(logp_old, logp_ref)

        for _ in range(grpo.inner_epochs):
            grad = grpo_gradient(group, BoundPolicy(policy, params, features, T), grpo)
            params = update_step(params, grad, grpo.learning_rate)

        report.rows.append({
            "iter": it,
            "mean_reward": _fmean(s.composite for s in scored),
            "mean_vg": _fmean(s.r_vg for s in scored),
            "mean_la": _fmean(s.r_la for s in scored),
            "mean_mc": _fmean(s.r_mc for s in scored),
            "mismatch_rate": _fmean(1.0 - s.r_mc for s in scored),
            "kl_mean": _fmean(kl),
        })

    report.final_params = params
    return report


def params_to_json(policy: ToyPolicy, params: np.ndarray) -> dict[str, Any]:
    return {
        "shape": list(params.shape),
        "heads": {"answer": list(policy.answers), "stated_quadrant": 4, "anchor_quadrant": 4,
                  "anchor_cell": policy.grid.n_cells},
        "n_features": policy.n_features,
        "params": params.tolist(),
    }
