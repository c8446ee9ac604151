"""Gaussian-process surrogates on structured meshes, trained against a diffusion-sensor loss."""

from .diffusion import LossReport, SensorField, diffusion_loss, sensor_staggered_md, sensor_true_md
from .experiment import ExperimentConfig, RunResult, generate_synthetic_dataset, run_grid
from .gpr import GPModel, fit, fit_with_jitter, log_marginal_likelihood, predict_mean, predict_var
from .kernels import Hyperparams, KernelSpec
from .mesh import StructuredMesh, build_staggered_mesh, load_mesh_csv, normalize_mesh
from .optimize import OptimizerConfig, minimize_dfo, minimize_quasi_newton

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "GPModel",
    "Hyperparams",
    "KernelSpec",
    "LossReport",
    "OptimizerConfig",
    "RunResult",
    "SensorField",
    "StructuredMesh",
    "build_staggered_mesh",
    "diffusion_loss",
    "fit",
    "fit_with_jitter",
    "generate_synthetic_dataset",
    "load_mesh_csv",
    "log_marginal_likelihood",
    "minimize_dfo",
    "minimize_quasi_newton",
    "normalize_mesh",
    "predict_mean",
    "predict_var",
    "run_grid",
    "sensor_staggered_md",
    "sensor_true_md",
]
