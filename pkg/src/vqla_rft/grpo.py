"""Group-relative advantages, the per-sample KL estimator, and the GRPO
surrogate objective with its exact gradient.

Log-probabilities are sequence level: one natural-log scalar per sampled
output.  The objective is maximized, so :func:`update_step` ascends.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, GroupTooSmall, NonFinite

STD_FLOOR = 1e-8


class ObjectiveMode(str, enum.Enum):
    AS_WRITTEN = "as_written"
    CLIPPED = "clipped"


@dataclass(frozen=True)
class GrpoConfig:
    beta: float = 0.04
    epsilon: float = 0.2
    objective_mode: ObjectiveMode = ObjectiveMode.CLIPPED
    group_size: int = 4
    temperature: float = 0.7
    learning_rate: float = 1e-6
    iterations: int = 2000
    seed: int = 0
    inner_epochs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objective_mode", ObjectiveMode(self.objective_mode))
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.objective_mode is ObjectiveMode.CLIPPED and not 0 < self.epsilon < 1:
            raise ValueError("clipped objective needs epsilon in (0, 1)")
        if self.group_size < 2:
            raise GroupTooSmall(f"group_size must be >= 2, got {self.group_size}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass(frozen=True)
class AdvantageSet:
    advantages: np.ndarray
    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        return self.std <= STD_FLOOR


@dataclass(frozen=True)
class RolloutGroup:
    """One question's G sampled outputs and their log-probabilities.

    ``advantages`` may be supplied directly; otherwise they are derived from
    ``rewards``.
    """

    logp_theta: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    rewards: np.ndarray
    outputs: Sequence[Any] = ()
    question: Any = None
    advantages: np.ndarray | None = None

    def __post_init__(self):
        for name in ("logp_theta", "logp_old", "logp_ref", "rewards"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        g = self.logp_theta.shape
        if any(getattr(self, n).shape != g for n in ("logp_old", "logp_ref", "rewards")) or len(g) != 1:
            raise DimensionMismatch("log-prob and reward arrays must be 1-D with equal length")
        if g[0] < 2:
            raise GroupTooSmall(f"group needs at least 2 outputs, got {g[0]}")
        if self.outputs and len(self.outputs) != g[0]:
            raise DimensionMismatch("outputs and log-prob arrays differ in length")
        if self.advantages is not None:
            object.__setattr__(self, "advantages", np.asarray(self.advantages, dtype=float))
            if self.advantages.shape != g:
                raise DimensionMismatch("advantages length differs from group size")

    @property
    def size(self) -> int:
        return self.logp_theta.shape[0]

    def resolved_advantages(self) -> np.ndarray:
        if self.advantages is not None:
            return self.advantages
        return group_advantages(self.rewards).advantages


def _finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite("non-finite value in log-probabilities or rewards")


def group_advantages(rewards) -> AdvantageSet:
    """Standardize rewards within the group (population std).

    Groups whose std is at or below ``STD_FLOOR`` get all-zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.shape[0] < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got shape {r.shape}")
    _finite(r)
    mean = math.fsum(r) / len(r)
    centered = r - mean
    std = math.sqrt(math.fsum(centered * centered) / len(r))
    if std <= STD_FLOOR:
        return AdvantageSet(np.zeros_like(r), mean, std)
    return AdvantageSet(centered / std, mean, std)


def kl_estimate(logp_theta, logp_ref) -> np.ndarray:
    """Per-sample ``rho - log(rho) - 1`` with ``rho = pi_ref / pi_theta``.

    Computed as ``expm1(d) - d`` so tiny gaps do not cancel catastrophically.
    """
    lt = np.asarray(logp_theta, dtype=float)
    lr = np.asarray(logp_ref, dtype=float)
    _finite(lt, lr)
    d = lr - lt
    return np.maximum(np.expm1(d) - d, 0.0)


def surrogate(ratio: np.ndarray, adv: np.ndarray, cfg: GrpoConfig) -> np.ndarray:
    unclipped = ratio * adv
    if cfg.objective_mode is ObjectiveMode.AS_WRITTEN:
        return unclipped
    clipped = np.clip(ratio, 1 - cfg.epsilon, 1 + cfg.epsilon) * adv
    return np.minimum(unclipped, clipped)


def objective_from_terms(ratio, adv, kl, cfg: GrpoConfig) -> float:
    """``mean_i(surrogate_i - beta * kl_i)`` given the per-output pieces."""
    ratio, adv, kl = (np.asarray(x, dtype=float) for x in (ratio, adv, kl))
    terms = surrogate(ratio, adv, cfg) - cfg.beta * kl
    return math.fsum(terms) / len(terms)


def grpo_objective(group: RolloutGroup, cfg: GrpoConfig) -> float:
    _finite(group.logp_theta, group.logp_old, group.logp_ref)
    ratio = np.exp(group.logp_theta - group.logp_old)
    kl = kl_estimate(group.logp_theta, group.logp_ref)
    return objective_from_terms(ratio, group.resolved_advantages(), kl, cfg)


def surrogate_weights(group: RolloutGroup, cfg: GrpoConfig) -> np.ndarray:
    """Per-output coefficient ``c_i`` such that the gradient is ``mean_i c_i * grad logp_i``."""
    _finite(group.logp_theta, group.logp_old, group.logp_ref)
    adv = group.resolved_advantages()
    ratio = np.exp(group.logp_theta - group.logp_old)
    d_surr = ratio * adv
    if cfg.objective_mode is ObjectiveMode.CLIPPED:
        lo, hi = 1 - cfg.epsilon, 1 + cfg.epsilon
        # min() picks the constant clipped branch only when it is strictly smaller
        clipped_active = ((adv > 0) & (ratio > hi)) | ((adv < 0) & (ratio < lo))
        d_surr = np.where(clipped_active, 0.0, d_surr)
    rho = np.exp(group.logp_ref - group.logp_theta)
    return d_surr - cfg.beta * (1.0 - rho)


def grpo_gradient_from_scores(group: RolloutGroup, scores: np.ndarray, cfg: GrpoConfig) -> np.ndarray:
    """Gradient of :func:`grpo_objective` given ``scores[i] = d logp_theta(o_i) / d params``.

    ``logp_old`` and ``logp_ref`` are treated as constants.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != group.size:
        raise DimensionMismatch(f"{scores.shape[0]} score rows for a group of {group.size}")
    coef = surrogate_weights(group, cfg)
    # fixed-order contraction keeps results bit-stable
    return np.tensordot(coef, scores, axes=(0, 0)) / group.size


class PolicyInterface(Protocol):
    def logprob_grad(self, output: Any) -> tuple[float, np.ndarray]:
        """Return ``(log pi_theta(output), d log pi_theta(output) / d params)``."""
        ...


def grpo_gradient(group: RolloutGroup, policy: PolicyInterface, cfg: GrpoConfig) -> np.ndarray:
    """Exact gradient at the policy's current parameters.

    ``group.logp_theta`` is refreshed from ``policy`` so the gradient and the
    value it differentiates are evaluated at the same point.
    """
    if not group.outputs:
        raise DimensionMismatch("group carries no outputs to score under the policy")
    pairs = [policy.logprob_grad(o) for o in group.outputs]
    logps = np.array([lp for lp, _ in pairs])
    scores = np.stack([g for _, g in pairs])
    current = replace(group, logp_theta=logps)
    return grpo_gradient_from_scores(current, scores, cfg)


def update_step(params: np.ndarray, gradient: np.ndarray, learning_rate: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if params.shape != gradient.shape:
        raise DimensionMismatch(f"params {params.shape} vs gradient {gradient.shape}")
    return params + learning_rate * gradient
