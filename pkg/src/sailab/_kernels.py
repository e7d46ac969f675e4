"""Fused single-pass loops for the per-step hot path."""

from __future__ import annotations

import math

import numba
import numpy as np

# Moments below this are flushed to zero: left alone, rarely-updated entries
# decay into subnormal floats, which are an order of magnitude slower.
FLUSH = 1e-30


@numba.njit(cache=True)
def all_finite(x):
    # 0 * inf and 0 * nan are nan, so one branch-free pass flags both.
    acc = 0.0
    for i in range(x.size):
        acc += 0.0 * x[i]
    return acc == 0.0


@numba.njit(cache=True)
def rows_finite(x, rows, n_rows, width):
    """``all_finite`` restricted to the given leading rows and the dense tail."""
    acc = 0.0
    for k in range(rows.size):
        lo = rows[k] * width
        for i in range(lo, lo + width):
            acc += 0.0 * x[i]
    for i in range(n_rows * width, x.size):
        acc += 0.0 * x[i]
    return acc == 0.0


@numba.njit(cache=True, fastmath=True)
def adam_update(theta, grad, m, v, lr_t, beta1, beta2, eps):
    for i in range(theta.size):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        if abs(mi) < FLUSH:
            mi = 0.0
        if vi < FLUSH:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        theta[i] -= lr_t * mi / (math.sqrt(vi) + eps)


@numba.njit(cache=True, fastmath=True)
def rmsprop_update(theta, grad, sq, lr, rho, eps):
    for i in range(theta.size):
        g = grad[i]
        si = rho * sq[i] + (1.0 - rho) * g * g
        if si < FLUSH:
            si = 0.0
        sq[i] = si
        theta[i] -= lr * g / (math.sqrt(sq[i]) + eps)


@numba.njit(cache=True)
def scatter_add_rows(out, rows, values):
    """``out[rows[i]] += values[i]`` with repeated rows accumulated."""
    for i in range(rows.size):
        r = rows[i]
        for j in range(values.shape[1]):
            out[r, j] += values[i, j]


@numba.njit(cache=True)
def scatter_add_entries(out, rows, cols, values):
    for i in range(rows.size):
        out[rows[i], cols[i]] += values[i]


@numba.njit(cache=True, fastmath=True)
def adam_update_rows(theta, grad, m, v, lr_t, beta1, beta2, eps, touched, width):
    """Adam over theta, skipping leading ``width``-sized rows never touched.

    An untouched row has zero gradient and zero moments, so its Adam step is
    exactly zero; skipping it changes nothing.
    """
    n_rows = touched.size
    for r in range(n_rows):
        if touched[r]:
            _adam_span(theta, grad, m, v, lr_t, beta1, beta2, eps, r * width, (r + 1) * width)
    _adam_span(theta, grad, m, v, lr_t, beta1, beta2, eps, n_rows * width, theta.size)


@numba.njit(cache=True, fastmath=True)
def lazy_adam_update(theta, grad, m, v, lr_t, beta1, beta2, eps, rows, n_rows, width):
    """Adam restricted to the given (unique) leading rows plus the dense tail."""
    for k in range(rows.size):
        r = rows[k]
        _adam_span(theta, grad, m, v, lr_t, beta1, beta2, eps, r * width, (r + 1) * width)
    _adam_span(theta, grad, m, v, lr_t, beta1, beta2, eps, n_rows * width, theta.size)


@numba.njit(cache=True, fastmath=True, inline="always")
def _adam_span(theta, grad, m, v, lr_t, beta1, beta2, eps, lo, hi):
    for i in range(lo, hi):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        if abs(mi) < FLUSH:
            mi = 0.0
        if vi < FLUSH:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        theta[i] -= lr_t * mi / (math.sqrt(vi) + eps)
