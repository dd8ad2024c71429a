"""Epitome-based scalable image coding.

Epitome generation by self-similarity search and greedy chart growth, a
simulated base/enhancement layer codec, decoder-side restoration of the
enhancement-layer pixels left out of the epitome (E-LLE, E-LLM) and
rate-distortion evaluation.
"""

from .codec_sim import CodecConfig, LayerBitstreamStats, PipelineResult, code_plane, run_pipeline
from .epitome import AssignationMap, Epitome, generate_epitome, grow_epitome, pad_to_block_grid
from .errors import (EpitomeError, EvaluationError, IntegrityError, NumericalError, RangeError,
                     ShapeError)
from .evaluation import ExperimentGrid, RDCurve, RDPoint, bd_rate, run_grid
from .image_core import BlockGrid, PixelRegion, downsample_2x, mse, psnr, upsample_2x
from .restoration import Method, RestorationParams, restore_el
from .self_similarity import MatchLists, ReverseLists, build_reverse_lists, find_matches

__version__ = "0.1.0"

__all__ = [
    "AssignationMap", "BlockGrid", "CodecConfig", "Epitome", "EpitomeError", "EvaluationError",
    "ExperimentGrid", "IntegrityError", "LayerBitstreamStats", "MatchLists", "Method",
    "NumericalError", "PipelineResult", "PixelRegion", "RDCurve", "RDPoint", "RangeError",
    "RestorationParams", "ReverseLists", "ShapeError", "bd_rate", "build_reverse_lists",
    "code_plane", "downsample_2x", "find_matches", "generate_epitome", "grow_epitome", "mse",
    "pad_to_block_grid", "psnr", "restore_el", "run_grid", "run_pipeline", "upsample_2x",
]
