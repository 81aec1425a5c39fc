"""Cooperative multi-AP target sensing for cell-free ISAC networks.

Scene synthesis, Cramer-Rao bounds, ADMM placement of APs and antennas, and a
symbol-level fusion sensing pipeline with benchmark baselines.
"""

from .baselines import LatticeConfig, lattice_fuse, mle_localize
from .crb import CrbPair, SingularFimError, crb_pair, crb_position, crb_velocity
from .experiment import ExperimentPlan, MetricRow, emit_results, run_experiment
from .placement import AdmmConfig, AdmmResult, DecisionVector, run_admm, sample_targets
from .scene import (
    ApNode, EchoTensor, Scene, SceneError, TargetState, WaveformConfig, load_scene,
    reference_scene, save_scene, synthesize_echo, with_snr,
)
from .sensing import SenseConfig, TargetEstimate, sense, sl_mdts

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "AdmmResult", "ApNode", "CrbPair", "DecisionVector", "EchoTensor",
    "ExperimentPlan", "LatticeConfig", "MetricRow", "Scene", "SceneError", "SenseConfig",
    "SingularFimError", "TargetEstimate", "TargetState", "WaveformConfig", "crb_pair",
    "crb_position", "crb_velocity", "emit_results", "lattice_fuse", "load_scene", "mle_localize",
    "reference_scene", "run_admm", "run_experiment", "sample_targets", "save_scene", "sense",
    "sl_mdts", "synthesize_echo", "with_snr",
]
