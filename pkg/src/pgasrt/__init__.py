"""pgasrt: a partitioned-global-address-space runtime library.

Per-rank memory segments with virtual address alignment, an active-message
transport, one-sided put/get, tree collectives, an active-message
distributed lock, and an SPMD launcher, plus micro-benchmarks and two
mini-applications (ring matrix multiply, halo-exchange stencil).
"""

from . import errors
from .collectives import ElementType, ReduceOp
from .config import RuntimeConfig, parse_size
from .engine import AmToken
from .memory import GlobalAddress, SegmentKind
from .rma import RmaHandle
from .runtime import Runtime, free_port, run_local, runtime_init

__version__ = "0.1.0"

__all__ = [
    "AmToken",
    "ElementType",
    "GlobalAddress",
    "ReduceOp",
    "RmaHandle",
    "Runtime",
    "RuntimeConfig",
    "SegmentKind",
    "errors",
    "free_port",
    "parse_size",
    "run_local",
    "runtime_init",
    "__version__",
]
