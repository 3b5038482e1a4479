"""Backend selection for the recurrent kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. ``EALSTM_BACKEND=python`` forces the fallback, ``cython`` makes a
missing extension an import error.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ImportError(
            f"kernel backend {name!r} unavailable; have {available_backends()}"
        ) from None


def _select():
    requested = os.environ.get("EALSTM_BACKEND", "auto").lower()
    if requested == "auto":
        return "cython" if _ckernels is not None else "python"
    get_backend(requested)
    return requested


BACKEND = _select()
_impl = _BACKENDS[BACKEND]
recurrent_forward = _impl.recurrent_forward
recurrent_backward = _impl.recurrent_backward
