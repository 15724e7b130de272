"""Hot simulation kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it was built and imports cleanly; setting
``LOCALSTAB_BACKEND=python`` forces the fallback.  Both produce identical
output for identical keys.
"""

import os

from . import _pykernels as python_backend

try:
    if os.environ.get("LOCALSTAB_BACKEND", "").lower() == "python":
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as _active
except ImportError:
    _active = python_backend
    compiled_backend = None
else:
    compiled_backend = _active

BACKEND = _active.BACKEND

make_key = _active.make_key
uniform = _active.uniform
jackson_run = _active.jackson_run
fcfs_run = _active.fcfs_run
csma_run = _active.csma_run
csma_priorities = _active.csma_priorities
counterexample_run = _active.counterexample_run
heavy_jump = _active.heavy_jump

__all__ = [
    "BACKEND", "compiled_backend", "python_backend", "make_key", "uniform",
    "jackson_run", "fcfs_run", "csma_run", "csma_priorities",
    "counterexample_run", "heavy_jump",
]
