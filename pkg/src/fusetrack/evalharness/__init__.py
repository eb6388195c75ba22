"""Synthetic scenario generation and CLEAR-MOT scoring."""
from .metrics import CRITERIA, EvalError, MotMetrics, evaluate
from .scenario import DetectionModel, ObjectSpec, Scenario, ScenarioError, generate

__all__ = [
    "CRITERIA",
    "DetectionModel",
    "EvalError",
    "MotMetrics",
    "ObjectSpec",
    "Scenario",
    "ScenarioError",
    "evaluate",
    "generate",
]
