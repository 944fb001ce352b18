"""Compiled scalar math shared by the reference scans and the engines.

numpy's vectorised ``exp``/``log1p`` can differ from libm by an ulp, while
numba calls libm. Routing every discretisation through these functions keeps
engine/oracle differences down to the scan arithmetic itself.
"""

import math

import numpy as np
from numba import njit

SOFTPLUS_THRESHOLD = 20.0


@njit(cache=True, nogil=True)
def softplus(v):
    if v > SOFTPLUS_THRESHOLD:
        return v
    return math.log1p(math.exp(v))


@njit(cache=True, nogil=True)
def softplus_grad(v):
    # derivative of the thresholded softplus above
    if v > SOFTPLUS_THRESHOLD:
        return 1.0
    return 1 / (1 + math.exp(-v))


@njit(cache=True, nogil=True)
def _softplus_flat(v, out):
    for k in range(v.size):
        out[k] = softplus(v[k])


@njit(cache=True, nogil=True)
def _exp_flat(v, out):
    for k in range(v.size):
        out[k] = math.exp(v[k])


def _apply(kernel, fallback, v):
    v = np.asarray(v)
    if v.dtype not in (np.float32, np.float64):
        return fallback(v)
    flat = np.ascontiguousarray(v).ravel()
    out = np.empty_like(flat)
    kernel(flat, out)
    return out.reshape(v.shape)


def _softplus_numpy(v):
    return np.where(v > SOFTPLUS_THRESHOLD, v, np.log1p(np.exp(np.minimum(v, SOFTPLUS_THRESHOLD))))


def softplus_array(v) -> np.ndarray:
    """Thresholded softplus; falls back to numpy for dtypes numba lacks (longdouble)."""
    return _apply(_softplus_flat, _softplus_numpy, v)


def exp_array(v) -> np.ndarray:
    return _apply(_exp_flat, np.exp, v)
