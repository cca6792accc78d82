"""Batch experiment runner: INI experiment files in, CSV/JSON/certificate artifacts out."""

from .models import ExperimentConfig, ExperimentKind, ModelType
from .runner import RunResult, run, validate

__all__ = ["ExperimentConfig", "ExperimentKind", "ModelType", "RunResult", "run", "validate"]
