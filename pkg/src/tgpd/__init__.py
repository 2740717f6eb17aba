"""Multi-task policy distillation for text-based games, at desk scale."""

__version__ = "0.1.0"
