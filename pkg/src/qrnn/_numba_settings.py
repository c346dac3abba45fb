import os

_DISABLE_VALUES = {"1", "true", "yes", "on"}

#: Set ``QRNN_DISABLE_NUMBA=1`` to run every kernel through the pure-numpy path.
USE_NUMBA = os.environ.get("QRNN_DISABLE_NUMBA", "0").strip().lower() not in _DISABLE_VALUES

if USE_NUMBA:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
    "error_model": "numpy",
}
