"""Active target tracking toolkit: deterministic simulator, EKF beliefs,
information-driven planner baselines, Q-learning trainer, and evaluation
suites. The learner module imports torch lazily; everything else is
numpy-based."""

from .geom import Polar, Pose2
from .dynamics import ACTIONS, Action, TargetParams, TargetState
from .sensing import Measurement, SensorParams
from .belief import Belief, BeliefParams
from .worldmap import GridMap, ObstacleSet, VisitGrid

__all__ = [
    "ACTIONS",
    "Action",
    "Belief",
    "BeliefParams",
    "GridMap",
    "Measurement",
    "ObstacleSet",
    "Polar",
    "Pose2",
    "SensorParams",
    "TargetParams",
    "TargetState",
    "VisitGrid",
]

__version__ = "0.1.0"
