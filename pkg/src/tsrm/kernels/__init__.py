"""Window kernel backend selection.

The compiled extension is preferred when it imported cleanly; set
``TSRM_KERNELS=numpy`` to force the fallback or ``TSRM_KERNELS=compiled``
to make a missing extension a hard error. ``BACKEND`` reports the choice.
"""

import os

import numpy as np

from . import numpy_backend

_choice = os.environ.get("TSRM_KERNELS", "auto").lower()
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(f"TSRM_KERNELS must be auto, compiled, or numpy, got {_choice!r}")

_ext = None
if _choice != "numpy":
    try:
        from . import _window_ops as _ext
    except ImportError:
        if _choice == "compiled":
            raise
        _ext = None

BACKEND = "compiled" if _ext is not None else "numpy"


def _compiled_gather(x, kernel_size, stride, dilation, n_windows):
    x = np.ascontiguousarray(x)
    out = np.empty((x.shape[0], n_windows, kernel_size, x.shape[2]), dtype=x.dtype)
    _ext.gather_windows_into(x, kernel_size, stride, dilation, out)
    return out


def _compiled_scatter(cols, stride, dilation, out_len):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], out_len, cols.shape[3]), dtype=cols.dtype)
    _ext.scatter_windows_into(cols, stride, dilation, out)
    return out


if _ext is not None:

    def gather_windows(x, kernel_size, stride, dilation, n_windows):
        if x.dtype not in (np.float32, np.float64):
            return numpy_backend.gather_windows(x, kernel_size, stride, dilation, n_windows)
        return _compiled_gather(x, kernel_size, stride, dilation, n_windows)

    def scatter_windows(cols, stride, dilation, out_len):
        if cols.dtype not in (np.float32, np.float64):
            return numpy_backend.scatter_windows(cols, stride, dilation, out_len)
        return _compiled_scatter(cols, stride, dilation, out_len)

else:
    gather_windows = numpy_backend.gather_windows
    scatter_windows = numpy_backend.scatter_windows
