"""Data-driven functional observability and functional observer synthesis
for linear network systems, with a Koopman front end for nonlinear plants."""

__version__ = "0.1.0"

from .numkit import RankPolicy
from .obsv import LinearPlant, ObservabilityVerdict, data_criterion, model_criterion
from .synth import ObserverSpec, PoleConfig, synth_pipeline
from .trajdata import SignalSequence, TrajectoryBundle, load_bundle, save_bundle

__all__ = [
    "RankPolicy",
    "LinearPlant",
    "ObservabilityVerdict",
    "data_criterion",
    "model_criterion",
    "ObserverSpec",
    "PoleConfig",
    "synth_pipeline",
    "SignalSequence",
    "TrajectoryBundle",
    "load_bundle",
    "save_bundle",
    "__version__",
]
