"""Shared-matrix (vector-vector-matrix) weight parametrization: fitting,
clock models and a systolic-array simulator."""

__version__ = "0.1.0"

from .core import VvmaParam, expand, matvec, new_vvma, pad_shape, param_count
from .costmodel import ClockParams, CostReport, MatmulShape, aggregate, clocks_baseline, clocks_vvma
from .fit import FitConfig, FitReport, fit_lowrank, fit_vvma, matched_rank, vvma_fit_grad
from .linalg import RandomSpec, frob_dist, frob_norm, optimal_lowrank_error, random_matrix, svd

__all__ = [
    "VvmaParam", "expand", "matvec", "new_vvma", "pad_shape", "param_count",
    "ClockParams", "CostReport", "MatmulShape", "aggregate", "clocks_baseline", "clocks_vvma",
    "FitConfig", "FitReport", "fit_lowrank", "fit_vvma", "matched_rank", "vvma_fit_grad",
    "RandomSpec", "frob_dist", "frob_norm", "optimal_lowrank_error", "random_matrix", "svd",
]
