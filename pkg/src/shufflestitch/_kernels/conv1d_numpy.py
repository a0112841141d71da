"""Pure-numpy conv1d kernels (im2col lowering onto BLAS matmuls).

Shared conventions with the compiled backend:

* input  ``x``  has shape (T, C_in), time-major
* kernel ``w``  has shape (K, C_in, C_out)
* output ``y``  has shape (T + 2*pad - K + 1, C_out), stride fixed at 1
"""

import numpy as np


def _pad_time(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (0, 0)))


def conv1d_forward(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    k, c_in, c_out = w.shape
    xp = _pad_time(x, pad)
    t_out = xp.shape[0] - k + 1
    # (t_out, c_in, k) windows, flattened to rows of (k * c_in) to match
    # w.reshape(k * c_in, c_out)
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)
    cols = cols.transpose(0, 2, 1).reshape(t_out, k * c_in)
    return cols @ w.reshape(k * c_in, c_out)


def conv1d_backward_input(gy: np.ndarray, w: np.ndarray, t_in: int, pad: int) -> np.ndarray:
    k, c_in, c_out = w.shape
    t_out = gy.shape[0]
    gcols = gy @ w.reshape(k * c_in, c_out).T  # (t_out, k * c_in)
    gxp = np.zeros((t_in + 2 * pad, c_in))
    for j in range(k):
        gxp[j:j + t_out] += gcols[:, j * c_in:(j + 1) * c_in]
    if pad == 0:
        return gxp
    return gxp[pad:pad + t_in]


def conv1d_backward_kernel(gy: np.ndarray, x: np.ndarray, k: int, pad: int) -> np.ndarray:
    xp = _pad_time(x, pad)
    t_out = gy.shape[0]
    c_in = x.shape[1]
    gw = np.empty((k, c_in, gy.shape[1]))
    for j in range(k):
        gw[j] = xp[j:j + t_out].T @ gy
    return gw
