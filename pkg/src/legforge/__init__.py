from legforge.genome import LegGenome
from legforge.simulation import EnvironmentModel, EvaluationResult, evaluate_leg

__all__ = ["EnvironmentModel", "EvaluationResult", "LegGenome", "evaluate_leg"]
__version__ = "0.1.0"
