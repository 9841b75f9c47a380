"""Reaction-diffusion update kernels: compiled core with a NumPy fallback.

The backend is selected once at import. Set EQUIAVG_KERNEL=python to force
the fallback, EQUIAVG_KERNEL=compiled to require the extension (ImportError
if it was not built), or leave unset/auto to prefer the compiled kernel.
Both backends evaluate the same update expression and agree bit for bit.
"""

import os

from . import reference

try:
    from . import _gray_scott as _compiled
except ImportError:
    _compiled = None

_choice = os.environ.get("EQUIAVG_KERNEL", "auto")
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"EQUIAVG_KERNEL must be auto, compiled, or python, got {_choice!r}")
if _choice == "compiled" and _compiled is None:
    raise ImportError("EQUIAVG_KERNEL=compiled but the extension is not built")

if _choice == "python" or _compiled is None:
    BACKEND = "python"
    gs_substeps = reference.gs_substeps
else:
    BACKEND = "compiled"
    gs_substeps = _compiled.gs_substeps

HAVE_COMPILED = _compiled is not None


def compiled_substeps():
    """The compiled kernel entry point, or None if unavailable."""
    return None if _compiled is None else _compiled.gs_substeps
