"""Turnstile-stream estimation of frequency moments F_p for p > 2."""

from .countsketch import CountSketch
from .f2sketch import AmsSketch
from .ghss import EstimateReport, GhssSketch, SketchTooLarge, Thresholds
from .harness import StreamSpec, TrialConfig, TrialReport, exact_moment, frequencies, generate_stream, run_trials
from .hashing import HashBank, LevelHashes, PolyHashFamily, RademacherFamily, derive_seed
from .params import ParamSet, ScaledKnobs, derive_paper_params, derive_scaled_params
from .tpe import ConstantWeightCode, TaylorConfig, averaged_tp_estimate, build_code, tp_estimate

__all__ = [
    "AmsSketch",
    "ConstantWeightCode",
    "CountSketch",
    "EstimateReport",
    "GhssSketch",
    "HashBank",
    "LevelHashes",
    "ParamSet",
    "PolyHashFamily",
    "RademacherFamily",
    "ScaledKnobs",
    "SketchTooLarge",
    "StreamSpec",
    "TaylorConfig",
    "Thresholds",
    "TrialConfig",
    "TrialReport",
    "averaged_tp_estimate",
    "build_code",
    "derive_paper_params",
    "derive_scaled_params",
    "derive_seed",
    "exact_moment",
    "frequencies",
    "generate_stream",
    "run_trials",
    "tp_estimate",
]
