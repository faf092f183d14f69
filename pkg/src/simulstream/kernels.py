"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
module is.  Set ``SIMULSTREAM_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels as python

compiled = None
if os.environ.get("SIMULSTREAM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

BACKENDS = {"python": python}
if compiled is not None:
    BACKENDS["cython"] = compiled
