"""Hot convolution and pooling kernels.

Two interchangeable backends implement the same four functions:

* ``numba`` -- explicit loops compiled with ``numba.jit`` (default)
* ``numpy`` -- vectorised reference built on ``sliding_window_view``

Set ``HALFCNN_NUMBA=0`` in the environment to force the numpy path. The numba
backend is also skipped silently if numba cannot be imported.
"""
import importlib
import os

from . import numpy_impl

_FUNCS = ("conv_forward", "conv_backward", "maxpool_forward", "maxpool_backward")


def _numba_requested() -> bool:
    return os.environ.get("HALFCNN_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


def get_backend(name: str):
    """Return the kernel module for ``"numpy"`` or ``"numba"``."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        return importlib.import_module(f"{__name__}.numba_impl")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if _numba_requested():
        try:
            return "numba", get_backend("numba")
        except ImportError:
            pass
    return "numpy", numpy_impl


BACKEND, _impl = _select()

conv_forward = _impl.conv_forward
conv_backward = _impl.conv_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = ["BACKEND", "get_backend", *_FUNCS]
