"""Liouville quantum gravity by simulation: chaos measures, Liouville Brownian
motion on the line and in the plane, and Brownian bridge estimators of heat
kernel transforms."""

__version__ = "0.1.0"

from .field import (CovarianceSpec, FieldRangeError, FieldSample, GridSpec, PointField, covariance_mff,
                    cutoff_covariance, sample_field_at_points, sample_field_grid)
from .chaos import (BallMassReport, ChaosMeasure, PhaseError, ball_mass_exponent, critical_boundary_measure,
                    gmc_measure)
from .boundary import (MonotoneMap, RangeExit, RejectedRealization, boundary_heat_kernel, boundary_lbm_path,
                       boundary_spectral_dimension, build_phi, phi_inverse)
from .lbm2d import Clock, ClockRangeError, UnresolvedCutoff, WalkPath, clock, clock_inverse, lbm_position, sample_walk
from .bridge import (BridgePath, CoupledPaths, TransformConfig, TransformEstimate, bridge_clock, couple_paths,
                     integral_transform, occupation_kernel_integral, rn_weight, sample_bridge,
                     spectral_dimension_estimate, spectral_dimension_fit)
from .config import ConfigError, ExperimentConfig, parse_config, render_config

__all__ = [
    "__version__",
    "CovarianceSpec", "FieldRangeError", "FieldSample", "GridSpec", "PointField", "covariance_mff",
    "cutoff_covariance", "sample_field_at_points", "sample_field_grid",
    "BallMassReport", "ChaosMeasure", "PhaseError", "ball_mass_exponent", "critical_boundary_measure", "gmc_measure",
    "MonotoneMap", "RangeExit", "RejectedRealization", "boundary_heat_kernel", "boundary_lbm_path",
    "boundary_spectral_dimension", "build_phi", "phi_inverse",
    "Clock", "ClockRangeError", "UnresolvedCutoff", "WalkPath", "clock", "clock_inverse", "lbm_position", "sample_walk",
    "BridgePath", "CoupledPaths", "TransformConfig", "TransformEstimate", "bridge_clock", "couple_paths",
    "integral_transform", "occupation_kernel_integral", "rn_weight", "sample_bridge", "spectral_dimension_estimate",
    "spectral_dimension_fit",
    "ConfigError", "ExperimentConfig", "parse_config", "render_config",
]
