"""Hot statevector kernels with a numba path and a pure-numpy fallback.

The active backend is chosen once at import time from
``QRNN_DISABLE_NUMBA``; ``get_backend`` hands out either one explicitly for
tests and benchmarks.
"""

from types import ModuleType

from .._numba_settings import USE_NUMBA
from . import _np
from . import opcodes

__all__ = ["backend", "get_backend", "opcodes", "BACKEND_NAME"]


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _np
    if name == "numba":
        from . import _nb

        return _nb
    raise ValueError(f"unknown kernel backend {name!r}")


BACKEND_NAME = "numba" if USE_NUMBA else "numpy"
backend = get_backend(BACKEND_NAME)
