"""Moving horizon estimation of battery state of charge and model coefficients."""
from .ecm import EcmParameters, PlantState, default_parameters
from .estimators import SocEstimator
from .mhe import MheConfig, MovingHorizonEstimator
from .optim import SimplexOptions, minimize
from .parallel import ParallelConfig
from .plant import TruthLog, simulate
from .profiles import HppcProfile, NoiseSpec
from .window import Schedule

__all__ = [
    "EcmParameters", "HppcProfile", "MheConfig", "MovingHorizonEstimator", "NoiseSpec", "ParallelConfig",
    "PlantState", "Schedule", "SimplexOptions", "SocEstimator", "TruthLog", "default_parameters",
    "minimize", "simulate",
]
