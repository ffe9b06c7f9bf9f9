"""Desk-scale visual question answering pipeline with a from-scratch
autodiff engine, frozen dual visual feature stubs, multiway transformer
fusion, token-level QA metrics, and an ablation harness.
"""

from .config import RunConfig
from .rng import RngStream
from .tensor import Tensor, backward, grad_check

__all__ = ["RunConfig", "RngStream", "Tensor", "backward", "grad_check"]
