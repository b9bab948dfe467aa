from __future__ import annotations

from .policy import RolloutAction
from .scene import SceneSpec


def emit_trace(action: RolloutAction, scene: SceneSpec) -> str:
    """Render an action as staged reasoning text in the rollout grammar.

    The Conclusion names the *stated* quadrant, which need not agree with the
    quadrant of the emitted box.
    """
    names = ", ".join(i.name for i in scene.instruments)
    n = len(scene.instruments)
    b = action.box
    return (
        "[Planning] Break the question down: recall what the target looks like, survey every "
        "visible object, pick the best match, then read off the answer.\n"
        "[Principle] The target is identified by its characteristic shape, jaw type and shaft.\n"
        f"[VisualAnalysis] The frame shows {n} instrument{'s' if n != 1 else ''} ({names}) "
        f"operating on the {scene.organ.name}.\n"
        "[Comparison] The candidate whose appearance best fits the principle is taken as the target.\n"
        f"[Conclusion] The target lies in the {action.stated.term} part of the frame.\n"
        f"<answer>{action.answer}</answer>\n"
        f"<box>[{b.x1}, {b.y1}, {b.x2}, {b.y2}]</box>"
    )
