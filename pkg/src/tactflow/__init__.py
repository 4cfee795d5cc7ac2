"""Vision-based tactile sensing from a dense color pattern.

Pattern generation, synthetic indentation, dense optical flow with adaptive
referencing, density-based contact depth, flow decomposition and a linear
force model.
"""

from .depth import DensityMap, DensityParams, gaussian_density, guided_filter, reconstruct_surface
from .flow import (AdaptiveTrackerState, FlowField, FlowParams, adaptive_step, dense_flow,
                   tracking_error)
from .force import (ForceDistribution, ForceModel, NHHDComponents, build_features, calibrate,
                    force_distribution, nhhd, quick_total_force)
from .pattern import PatternImage, PatternParams, PatternReport, generate_pattern, validate_pattern
from .pipeline import BenchReport, PipelineConfig, SweepSpec, bench, pattern_sweep, run_pipeline
from .simulator import (CameraModel, ForceSample, GroundTruthFlow, IndenterScenario,
                        displacement_field, render_deformed, synth_force_dataset)

__all__ = [
    "AdaptiveTrackerState", "BenchReport", "CameraModel", "DensityMap", "DensityParams",
    "FlowField", "FlowParams", "ForceDistribution", "ForceModel", "ForceSample",
    "GroundTruthFlow", "IndenterScenario", "NHHDComponents", "PatternImage", "PatternParams",
    "PatternReport", "PipelineConfig", "SweepSpec", "adaptive_step", "bench", "build_features",
    "calibrate", "dense_flow", "displacement_field", "force_distribution", "gaussian_density",
    "generate_pattern", "guided_filter", "nhhd", "pattern_sweep", "quick_total_force",
    "reconstruct_surface", "render_deformed", "run_pipeline", "synth_force_dataset",
    "tracking_error", "validate_pattern",
]
