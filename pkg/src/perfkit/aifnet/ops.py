"""Convolution, ReLU and volume-softmax primitives with reverse-mode backward.

Convolutions are stride-1 with same padding, implemented as im2col plus a
single matmul so the heavy lifting stays inside BLAS. Shapes:
inputs (C, Z, Y, X), weights (O, C, kz, ky, kx), float64 throughout.
"""
from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray, kz: int, ky: int, kx: int) -> np.ndarray:
    c, z, y, w = x.shape
    pz, py, px = kz // 2, ky // 2, kx // 2
    xp = np.pad(x, ((0, 0), (pz, pz), (py, py), (px, px)))
    cols = np.empty((c, kz, ky, kx, z, y, w), dtype=np.float64)
    for iz in range(kz):
        for iy in range(ky):
            for ix in range(kx):
                cols[:, iz, iy, ix] = xp[:, iz:iz + z, iy:iy + y, ix:ix + w]
    return cols.reshape(c * kz * ky * kx, z * y * w)


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 convolution; returns (out, cache for backward)."""
    o = w.shape[0]
    cols = _im2col(x, *w.shape[2:])
    out = w.reshape(o, -1) @ cols + b[:, None]
    return out.reshape((o,) + x.shape[1:]), (cols, x.shape)


def conv3d_backward(dy: np.ndarray, w: np.ndarray, cache, need_dx: bool = True):
    """Gradients (dx, dw, db) of a conv3d_forward call."""
    cols, x_shape = cache
    o, c, kz, ky, kx = w.shape
    z, y, x_dim = x_shape[1:]
    dy2 = dy.reshape(o, -1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    pz, py, px = kz // 2, ky // 2, kx // 2
    dcols = (w.reshape(o, -1).T @ dy2).reshape(c, kz, ky, kx, z, y, x_dim)
    dxp = np.zeros((c, z + 2 * pz, y + 2 * py, x_dim + 2 * px), dtype=np.float64)
    for iz in range(kz):
        for iy in range(ky):
            for ix in range(kx):
                dxp[:, iz:iz + z, iy:iy + y, ix:ix + x_dim] += dcols[:, iz, iy, ix]
    dx = dxp[:, pz:pz + z, py:py + y, px:px + x_dim]
    return dx, dw, db


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def volume_softmax(logits: np.ndarray) -> np.ndarray:
    """Joint softmax over every voxel, with max subtraction for stability."""
    flat = logits.reshape(-1)
    e = np.exp(flat - flat.max())
    return (e / e.sum()).reshape(logits.shape)


def volume_softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    """VJP of volume_softmax: dz = p * (dp - <p, dp>)."""
    inner = float((p * dp).sum())
    return p * (dp - inner)
