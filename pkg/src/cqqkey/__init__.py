"""Forward secret-key rates and protocol simulation for compound cqq sources."""

from .counterexample import build_counterexample, no_smi_gap_demo, smi_capacity_protocol
from .exceptions import ResourceError, ValidationError
from .linalg import DensityMatrix, Povm, mutual_information, state, trace_norm, von_neumann_entropy
from .protocol import (Protocol, ProtocolReport, SmiProtocol, evaluate_on_source, evaluate_protocol,
                       pgm_povm, random_binning_protocol)
from .rates import KeyRateEstimator, MarkovPreprocessing, converse_value, multi_letter_rate, optimize_k1
from .regularity import (ChannelNet, CubeCover, continuity_checks, cube_cover_decompose, hausdorff_distance,
                         regularity_modulus)
from .source import CompoundSource, CqChannel, CqqState, holevo_chi, load_source, tensor_extension
from .typicality import TypeClass, enumerate_types, tail_bound_check

__version__ = "0.1.0"

__all__ = [
    "ChannelNet", "CompoundSource", "CqChannel", "CqqState", "CubeCover", "DensityMatrix", "KeyRateEstimator",
    "MarkovPreprocessing", "Povm", "Protocol", "ProtocolReport", "ResourceError", "SmiProtocol", "TypeClass",
    "ValidationError", "build_counterexample", "continuity_checks", "converse_value", "cube_cover_decompose",
    "enumerate_types", "evaluate_on_source", "evaluate_protocol", "hausdorff_distance", "holevo_chi",
    "load_source", "multi_letter_rate", "mutual_information", "no_smi_gap_demo", "optimize_k1", "pgm_povm",
    "random_binning_protocol", "regularity_modulus", "smi_capacity_protocol", "state", "tail_bound_check",
    "tensor_extension", "trace_norm", "von_neumann_entropy",
]
