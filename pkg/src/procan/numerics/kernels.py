"""Loop kernels behind convolution and trilinear sampling (numpy versions)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather k×k windows of a padded (B, C, Hp, Wp) batch.

    Returns shape (B*out_h*out_w, C*k*k); column order is (c, ki, kj).
    """
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * out_h * out_w, c * k * k)


def col2im(
    cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, out_h: int, out_w: int
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded batch."""
    b, c, hp, wp = shape
    cols = cols.reshape(b, out_h, out_w, c, k, k)
    out = np.zeros(shape, dtype=cols.dtype)
    h_end = stride * (out_h - 1) + 1
    w_end = stride * (out_w - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + h_end : stride, j : j + w_end : stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def trilinear_sample(vol: np.ndarray, z: np.ndarray, y: np.ndarray, x: np.ndarray, fill: float) -> np.ndarray:
    """Sample ``vol`` at fractional voxel coordinates, ``fill`` outside the grid.

    A point is inside when every coordinate lies in [0, dim-1]; the eight
    corner weights are the usual products of linear weights per axis.
    """
    d, h, w = vol.shape
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    inside = (z >= 0) & (z <= d - 1) & (y >= 0) & (y <= h - 1) & (x >= 0) & (x <= w - 1)
    zc = np.clip(z, 0, d - 1)
    yc = np.clip(y, 0, h - 1)
    xc = np.clip(x, 0, w - 1)
    z0 = np.minimum(np.floor(zc).astype(np.intp), max(d - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    z1 = np.minimum(z0 + 1, d - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    tz = zc - z0
    ty = yc - y0
    tx = xc - x0
    c00 = vol[z0, y0, x0] * (1 - tx) + vol[z0, y0, x1] * tx
    c01 = vol[z0, y1, x0] * (1 - tx) + vol[z0, y1, x1] * tx
    c10 = vol[z1, y0, x0] * (1 - tx) + vol[z1, y0, x1] * tx
    c11 = vol[z1, y1, x0] * (1 - tx) + vol[z1, y1, x1] * tx
    c0 = c00 * (1 - ty) + c01 * ty
    c1 = c10 * (1 - ty) + c11 * ty
    out = c0 * (1 - tz) + c1 * tz
    return np.where(inside, out, fill)
