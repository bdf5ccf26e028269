"""Stencil kernel backend selection: compiled extension or numpy fallback.

The compiled core (pgasrt._stencil_core, built from Cython) is preferred
when the import succeeds; set PGASRT_KERNEL=python or PGASRT_KERNEL=native
to force a backend. Both evaluate the same expression tree in the same
order and produce bit-identical fields; `pgas-bench kernels` measures the
throughput difference.
"""

from __future__ import annotations

import os

from . import _stencil_py

try:
    from pgasrt import _stencil_core as _native
except ImportError:  # extension not built; numpy path carries everything
    _native = None

_FORCED = os.environ.get("PGASRT_KERNEL", "").strip().lower()


def available_backends() -> tuple[str, ...]:
    return ("python", "native") if _native is not None else ("python",)


def default_backend() -> str:
    if _FORCED in ("python", "native"):
        if _FORCED == "native" and _native is None:
            raise RuntimeError(
                "PGASRT_KERNEL=native but pgasrt._stencil_core is not built")
        return _FORCED
    return "native" if _native is not None else "python"


def stencil_step(cur_p, prev, out, coeffs, scale, backend: str | None = None):
    """One update step; dispatches to the selected backend."""
    b = backend or default_backend()
    if b == "native":
        if _native is None:
            raise RuntimeError("compiled stencil core is not available")
        _native.step(cur_p, prev, out, coeffs, scale)
    elif b == "python":
        _stencil_py.step(cur_p, prev, out, coeffs, scale)
    else:
        raise ValueError(f"unknown kernel backend {b!r}")
