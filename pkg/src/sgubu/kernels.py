"""Backend selection for the step kernels.

The compiled extension is used when it imports; setting the environment
variable ``SGUBU_PURE_PYTHON=1`` (or a failed build) selects the pure-Python
twin.  ``get(name)`` picks a backend explicitly.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("SGUBU_PURE_PYTHON"):
    DEFAULT = _compiled
else:
    DEFAULT = _kernels_py


def get(name: str | None = None):
    """The kernel module for ``name`` (``"cython"``, ``"python"`` or ``None`` for the default)."""
    if name is None:
        return DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def compiled_available() -> bool:
    return _compiled is not None
