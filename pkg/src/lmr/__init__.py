"""Per-part recurrent regression of body-model parameters from video features."""
from .body_model import BodyModel, build_synthetic_model, mesh
from .estimator import LMRRegressor
from .network import LmrNetwork
from .parts import PartScheme, default_scheme

__all__ = ["BodyModel", "LMRRegressor", "LmrNetwork", "PartScheme", "build_synthetic_model", "default_scheme", "mesh"]
__version__ = "0.1.0"
