"""Physics-informed neural networks for direct and inverse Stefan problems."""
from .problems import REGISTRY, ProblemId, get_problem
from .trainer import TrainConfig, TrainReport, evaluate, train

__all__ = ["REGISTRY", "ProblemId", "get_problem", "TrainConfig", "TrainReport", "evaluate", "train"]
__version__ = "0.1.0"
