"""Joint 3D atmospheric motion vector and image reconstruction from layered sounder images."""

from .admm import AdmmOptions, AdmmTrace, run_joint_admm, run_split_admm, run_variant
from .energy import DualState, SolverConfig, data_term, gradient_check, reg_d, residual
from .grid import (AMVState, GridShape, ImageStack, ObservationSet, PhysicsConstants, PressureGrid,
                   build_pressure_grid)
from .synth import SyntheticSpec, epe, generate_truth, make_dataset, vrmse

__version__ = "0.1.0"

__all__ = [
    "AMVState", "AdmmOptions", "AdmmTrace", "DualState", "GridShape", "ImageStack",
    "ObservationSet", "PhysicsConstants", "PressureGrid", "SolverConfig", "SyntheticSpec",
    "build_pressure_grid", "data_term", "epe", "generate_truth", "gradient_check", "make_dataset",
    "reg_d", "residual", "run_joint_admm", "run_split_admm", "run_variant", "vrmse",
]
