"""Rule-based rewards, GRPO math, dataset tooling and evaluation for reasoning
surgical visual question localized-answering (VQLA) models."""

__version__ = "0.1.0"
