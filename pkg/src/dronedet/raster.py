"""Small numpy raster kernels: bilinear resampling, affine warps, RGB<->HSV.

Images are ``H x W x C`` float arrays. Pixel ``(i, j)`` covers the unit square
``[j, j+1] x [i, i+1]`` so its centre sits at ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import numpy as np

GRAY = 114.0


def _bilinear_at(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at index-space coordinates (pixel centres at integers)."""
    h, w = img.shape[:2]
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resample_region(
    img: np.ndarray, x1: float, y1: float, x2: float, y2: float, out_w: int, out_h: int
) -> np.ndarray:
    """Bilinear resample of the continuous region ``[x1, x2] x [y1, y2]``.

    Output pixel centres are spread evenly over the region, so a region that
    coincides with the pixel grid at the same size is copied exactly.
    """
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    img = np.asarray(img, dtype=np.float64)
    xs = x1 + (np.arange(out_w) + 0.5) * ((x2 - x1) / out_w) - 0.5
    ys = y1 + (np.arange(out_h) + 0.5) * ((y2 - y1) / out_h) - 0.5
    out = _bilinear_at(img, xs, ys)
    return out[:, :, 0] if squeeze else out


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (out_w, out_h) == (w, h):
        return np.array(img, dtype=np.float64)
    return resample_region(img, 0.0, 0.0, float(w), float(h), out_w, out_h)


def warp_affine_nearest(
    img: np.ndarray, matrix: np.ndarray, out_w: int, out_h: int, fill: float = GRAY
) -> np.ndarray:
    """Forward-map ``img`` through the 2x3/3x3 ``matrix`` by inverse nearest lookup."""
    m = np.eye(3)
    m[:2] = np.asarray(matrix, dtype=np.float64)[:2]
    inv = np.linalg.inv(m)
    gx, gy = np.meshgrid(np.arange(out_w) + 0.5, np.arange(out_h) + 0.5)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    # snap values a hair below an integer so exact rotations stay exact
    ix = np.floor(sx + 1e-9).astype(np.int64)
    iy = np.floor(sy + 1e-9).astype(np.int64)
    h, w = img.shape[:2]
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.full((out_h, out_w) + img.shape[2:], fill, dtype=np.float64)
    out[valid] = img[iy[valid], ix[valid]]
    return out


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] to HSV with every channel in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(i, choices_r)
    g = np.choose(i, choices_g)
    b = np.choose(i, choices_b)
    return np.stack([r, g, b], axis=-1)
