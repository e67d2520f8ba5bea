"""Exact 1D total-variation flow, its spectral decomposition and related mode decompositions."""

from .baseline import BaselineConfig, baseline_flow, benchmark
from .kmd import build_dictionary, fit, koopman_eigenfunction
from .rdmd import exact_dmd, plain_dmd, rdmd, recover_components, reparametrize
from .spectral import SpectralSet, decompose, filter_band, spectrum
from .tv1d import PiecewiseFlow, evolve, sample, sample_many, subgradient, tv
from .tv2d import aniso_flow, aniso_step, spectral_bands_2d

__all__ = [
    "BaselineConfig",
    "PiecewiseFlow",
    "SpectralSet",
    "aniso_flow",
    "aniso_step",
    "baseline_flow",
    "benchmark",
    "build_dictionary",
    "decompose",
    "evolve",
    "exact_dmd",
    "filter_band",
    "fit",
    "koopman_eigenfunction",
    "plain_dmd",
    "rdmd",
    "recover_components",
    "reparametrize",
    "sample",
    "sample_many",
    "spectral_bands_2d",
    "spectrum",
    "subgradient",
    "tv",
]

__version__ = "0.1.0"
