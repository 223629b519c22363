"""Config-driven experiments and verification suites."""
from .config import PRESETS, validate
from .experiments import run_experiment

__all__ = ["PRESETS", "validate", "run_experiment"]
