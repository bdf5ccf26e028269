"""Mini-applications driving the runtime end-to-end."""

from .matmul import DoubleBuffer, MatSpec, ring_matmul
from .stencil import StencilSpec, reference_stencil, run_stencil

__all__ = [
    "DoubleBuffer",
    "MatSpec",
    "StencilSpec",
    "reference_stencil",
    "ring_matmul",
    "run_stencil",
]
