"""Synthetic surgical-scene environment and a linear policy for desk-scale RFT."""

from .loop import (
    EnvConfig,
    TrainingReport,
    build_policy,
    params_to_json,
    rollout_rng,
    run_rft,
    scene_rng,
    warm_start,
)
from .policy import BoundPolicy, CategoricalHeads, RolloutAction, ToyPolicy, categorical_logprob_grad
from .scene import AnchorGrid, Question, SceneObject, SceneSpec, Vocab, load_vocab, render_question, sample_scene
from .traces import emit_trace

__all__ = [
    "AnchorGrid",
    "BoundPolicy",
    "CategoricalHeads",
    "EnvConfig",
    "Question",
    "RolloutAction",
    "SceneObject",
    "SceneSpec",
    "ToyPolicy",
    "TrainingReport",
    "Vocab",
    "build_policy",
    "categorical_logprob_grad",
    "emit_trace",
    "load_vocab",
    "params_to_json",
    "render_question",
    "rollout_rng",
    "run_rft",
    "sample_scene",
    "scene_rng",
    "warm_start",
]
