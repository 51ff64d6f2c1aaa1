# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled window gather/scatter for strided, dilated 1D convolutions.

Same layout contract as ``numpy_backend``; outputs are allocated by the
caller so the fused float/double specializations stay allocation-free.
"""

ctypedef fused real:
    float
    double


def gather_windows_into(real[:, :, ::1] x, Py_ssize_t kernel_size,
                        Py_ssize_t stride, Py_ssize_t dilation,
                        real[:, :, :, ::1] out):
    cdef Py_ssize_t n, q, k, c, t
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t channels = x.shape[2]
    cdef Py_ssize_t n_windows = out.shape[1]
    for n in range(batch):
        for q in range(n_windows):
            for k in range(kernel_size):
                t = q * stride + k * dilation
                for c in range(channels):
                    out[n, q, k, c] = x[n, t, c]


def scatter_windows_into(real[:, :, :, ::1] cols, Py_ssize_t stride,
                         Py_ssize_t dilation, real[:, :, ::1] out):
    cdef Py_ssize_t n, q, k, c, t
    cdef Py_ssize_t batch = cols.shape[0]
    cdef Py_ssize_t n_windows = cols.shape[1]
    cdef Py_ssize_t kernel_size = cols.shape[2]
    cdef Py_ssize_t channels = cols.shape[3]
    for n in range(batch):
        for q in range(n_windows):
            for k in range(kernel_size):
                t = q * stride + k * dilation
                for c in range(channels):
                    out[n, t, c] += cols[n, q, k, c]
