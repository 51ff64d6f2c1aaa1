import os
import subprocess
import sys

import numpy as np
import pytest

from tsrm import kernels
from tsrm.kernels import numpy_backend


def manual_gather(x, kernel_size, stride, dilation, n_windows):
    n, _, c = x.shape
    out = np.zeros((n, n_windows, kernel_size, c), dtype=x.dtype)
    for w in range(n_windows):
        for k in range(kernel_size):
            out[:, w, k, :] = x[:, w * stride + k * dilation, :]
    return out


def manual_scatter(cols, stride, dilation, out_len):
    n, n_windows, kernel_size, c = cols.shape
    out = np.zeros((n, out_len, c), dtype=cols.dtype)
    for w in range(n_windows):
        for k in range(kernel_size):
            out[:, w * stride + k * dilation, :] += cols[:, w, k, :]
    return out


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "numpy")


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_gather_matches_manual(dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 25, 4)).astype(dtype)
    out = kernels.gather_windows(x, kernel_size=3, stride=2, dilation=3, n_windows=9)
    np.testing.assert_array_equal(out, manual_gather(x, 3, 2, 3, 9))


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_scatter_matches_manual(dtype):
    rng = np.random.default_rng(1)
    cols = rng.standard_normal((2, 9, 3, 4)).astype(dtype)
    out = kernels.scatter_windows(cols, stride=2, dilation=3, out_len=25)
    np.testing.assert_array_equal(out, manual_scatter(cols, 2, 3, 25))


def test_scatter_accumulates_overlaps():
    cols = np.ones((1, 4, 3, 1))
    out = kernels.scatter_windows(cols, stride=1, dilation=1, out_len=6)
    # positions hit by multiple windows accumulate their contributions
    np.testing.assert_array_equal(out[0, :, 0], [1.0, 2.0, 3.0, 3.0, 2.0, 1.0])


def test_gather_scatter_adjoint():
    rng = np.random.default_rng(2)
    for _ in range(20):
        length = int(rng.integers(6, 40))
        kernel = int(rng.integers(1, 6))
        dilation = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 6))
        if dilation * (kernel - 1) + 1 > length:
            continue
        n_windows = (length - dilation * (kernel - 1) - 1) // stride + 1
        x = rng.standard_normal((2, length, 3))
        y = rng.standard_normal((2, n_windows, kernel, 3))
        gathered = kernels.gather_windows(x, kernel, stride, dilation, n_windows)
        scattered = kernels.scatter_windows(y, stride, dilation, length)
        np.testing.assert_allclose(np.sum(gathered * y), np.sum(x * scattered), atol=1e-10)


def test_numpy_backend_agrees_with_selected():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 30, 5))
    ours = kernels.gather_windows(x, 4, 3, 2, 8)
    theirs = numpy_backend.gather_windows(x, 4, 3, 2, 8)
    np.testing.assert_array_equal(ours, theirs)
    cols = rng.standard_normal((2, 8, 4, 5))
    np.testing.assert_array_equal(
        kernels.scatter_windows(cols, 3, 2, 30), numpy_backend.scatter_windows(cols, 3, 2, 30)
    )


def test_non_float_dtype_falls_back():
    x = np.arange(24, dtype=np.int64).reshape(1, 12, 2)
    out = kernels.gather_windows(x, 2, 2, 1, 6)
    assert out.shape == (1, 6, 2, 2)
    np.testing.assert_array_equal(out, manual_gather(x, 2, 2, 1, 6))


def _backend_in_subprocess(value):
    return subprocess.run(
        [sys.executable, "-c", "import tsrm.kernels as k; print(k.BACKEND)"],
        capture_output=True, text=True, env=dict(os.environ, TSRM_KERNELS=value),
    )


def test_forced_numpy_backend():
    out = _backend_in_subprocess("numpy")
    assert out.returncode == 0 and out.stdout.strip() == "numpy"


def test_forced_compiled_backend():
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled extension not built in this environment")
    out = _backend_in_subprocess("compiled")
    assert out.returncode == 0 and out.stdout.strip() == "compiled"


def test_invalid_backend_value_rejected():
    out = _backend_in_subprocess("cuda")
    assert out.returncode != 0
    assert "TSRM_KERNELS" in out.stderr
