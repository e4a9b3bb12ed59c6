"""Kernel lane selection: compiled extension when available, else pure Python.

Set BDARSIM_PURE_PYTHON=1 to force the fallback lane. Both lanes share the
RNG and draw order, so trajectories are identical for a given seed.
"""

import os

if os.environ.get("BDARSIM_PURE_PYTHON") == "1":
    from . import _pykernels as impl
else:
    try:
        from . import _ckernels as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as impl

COMPILED = bool(getattr(impl, "COMPILED", False))
ChainKernel = impl.ChainKernel
CoupledKernel = impl.CoupledKernel

__all__ = ["ChainKernel", "CoupledKernel", "COMPILED", "impl"]
