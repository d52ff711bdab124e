"""Bayesian reasoning over chained generative and classifier networks."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND
