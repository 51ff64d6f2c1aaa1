"""Pure-numpy window kernels.

These mirror the compiled extension exactly and are the fallback backend.
Both operate on batched channel-last arrays:

    gather_windows   [N, L, C] -> [N, D, K, C]   (window extraction)
    scatter_windows  [N, D, K, C] -> [N, L, C]   (transposed accumulation)

where D is the number of windows, K the kernel size. For a fixed tap k the
source positions k*dilation + q*stride are pairwise distinct, so the scatter
can accumulate one tap at a time without index collisions.
"""

import numpy as np


def gather_windows(x, kernel_size, stride, dilation, n_windows):
    n, length, channels = x.shape
    out = np.empty((n, n_windows, kernel_size, channels), dtype=x.dtype)
    offsets = stride * np.arange(n_windows)
    for k in range(kernel_size):
        out[:, :, k, :] = x[:, k * dilation + offsets, :]
    return out


def scatter_windows(cols, stride, dilation, out_len):
    n, n_windows, kernel_size, channels = cols.shape
    out = np.zeros((n, out_len, channels), dtype=cols.dtype)
    offsets = stride * np.arange(n_windows)
    for k in range(kernel_size):
        out[:, k * dilation + offsets, :] += cols[:, :, k, :]
    return out
