"""Spectral attention operator networks for PDE surrogate modelling.

A NumPy implementation of a transformer-style neural operator whose token
mixer combines a Fourier branch (global, mode-wise complex MLP) and a
Haar-wavelet branch (linear attention over subband tokens), together with
the autodiff engine, Darcy-flow data generation and analysis tools it needs.
"""
from .analysis import SpectrumReport, SweepReport, energy_spectrum
from .darcy import GenerationConfig, generate_samples, sample_coefficient, solve_darcy
from .errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericError,
    SAOTError,
    ValidationError,
)
from .estimator import SAOTRegressor
from .gradcheck import grad_check
from .model import ModelConfig, SAOTModel, relative_l2
from .tensor import Tensor, no_grad
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "GenerationConfig",
    "ModelConfig",
    "NumericError",
    "SAOTError",
    "SAOTModel",
    "SAOTRegressor",
    "SpectrumReport",
    "SweepReport",
    "Tensor",
    "TrainConfig",
    "ValidationError",
    "energy_spectrum",
    "generate_samples",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "relative_l2",
    "sample_coefficient",
    "save_checkpoint",
    "solve_darcy",
    "train",
]
