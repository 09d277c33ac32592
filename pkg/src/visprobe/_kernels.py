"""Hot numeric kernels: separable Gaussian blur, Chebyshev dilation, onion-peel fill.

Blur and onion-peel fill have numba ``@njit`` implementations with
pure-numpy twins; the numpy path is selected by setting
``VISPROBE_DISABLE_NUMBA=1`` (or when numba is not importable). Both paths
accumulate in float64 in the same per-element order, so their outputs are
bit-identical; the test suite and ``benchmarks/bench_kernels.py`` rely on
that. Dilation always uses the vectorized shifted-OR form, which beats a
jitted loop at any radius worth using.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("VISPROBE_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

if not _DISABLE:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False
else:
    USING_NUMBA = False

# 8-connected neighborhood, fixed order shared by both fill paths.
_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_OFFSETS_ARR = np.array(_OFFSETS, dtype=np.int64)


def gaussian_weights(kernel: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps, sigma = kernel/6, truncated at the kernel extent."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and positive, got {kernel}")
    if kernel == 1:
        return np.ones(1, dtype=np.float64)
    sigma = kernel / 6.0
    offs = np.arange(kernel, dtype=np.float64) - (kernel // 2)
    w = np.exp(-(offs**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _np_conv_h(src: np.ndarray, w: np.ndarray) -> np.ndarray:
    h, width, _ = src.shape
    r = w.size // 2
    out = np.zeros_like(src)
    base = np.arange(width)
    for i in range(w.size):
        idx = np.clip(base + i - r, 0, width - 1)
        out += w[i] * src[:, idx, :]
    return out


def _np_conv_v(src: np.ndarray, w: np.ndarray) -> np.ndarray:
    h, _, _ = src.shape
    r = w.size // 2
    out = np.zeros_like(src)
    base = np.arange(h)
    for i in range(w.size):
        idx = np.clip(base + i - r, 0, h - 1)
        out += w[i] * src[idx, :, :]
    return out


def _np_blur(src: np.ndarray, w: np.ndarray) -> np.ndarray:
    return _np_conv_v(_np_conv_h(src, w), w)


def _np_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    h, width = mask.shape
    for axis, size in ((0, h), (1, width)):
        acc = out.copy()
        for d in range(1, radius + 1):
            lo = [slice(None), slice(None)]
            hi = [slice(None), slice(None)]
            lo[axis] = slice(0, size - d)
            hi[axis] = slice(d, size)
            acc[tuple(lo)] |= out[tuple(hi)]
            acc[tuple(hi)] |= out[tuple(lo)]
        out = acc
    return out


def _np_onion_fill(vals: np.ndarray, filled: np.ndarray) -> int:
    h, width, _ = vals.shape
    while True:
        remaining = int((~filled).sum())
        if remaining == 0:
            return 0
        nb_sum = np.zeros_like(vals)
        nb_cnt = np.zeros((h, width), dtype=np.int64)
        for dy, dx in _OFFSETS:
            dy0, dy1 = max(0, -dy), h + min(0, -dy)
            dx0, dx1 = max(0, -dx), width + min(0, -dx)
            sy0, sy1 = max(0, dy), h + min(0, dy)
            sx0, sx1 = max(0, dx), width + min(0, dx)
            m = filled[sy0:sy1, sx0:sx1]
            nb_cnt[dy0:dy1, dx0:dx1] += m
            nb_sum[dy0:dy1, dx0:dx1] += np.where(m[..., None], vals[sy0:sy1, sx0:sx1], 0.0)
        frontier = (~filled) & (nb_cnt > 0)
        if not frontier.any():
            return remaining
        vals[frontier] = nb_sum[frontier] / nb_cnt[frontier][:, None]
        filled |= frontier


if USING_NUMBA:

    @njit(cache=True)
    def _nb_conv_h(src, w):  # pragma: no cover - exercised via dispatch
        h, width, ch = src.shape
        k = w.size
        r = k // 2
        out = np.zeros_like(src)
        for y in range(h):
            for x in range(width):
                for c in range(ch):
                    acc = 0.0
                    for i in range(k):
                        xx = x + i - r
                        if xx < 0:
                            xx = 0
                        elif xx > width - 1:
                            xx = width - 1
                        acc += w[i] * src[y, xx, c]
                    out[y, x, c] = acc
        return out

    @njit(cache=True)
    def _nb_conv_v(src, w):  # pragma: no cover
        h, width, ch = src.shape
        k = w.size
        r = k // 2
        out = np.zeros_like(src)
        for y in range(h):
            for x in range(width):
                for c in range(ch):
                    acc = 0.0
                    for i in range(k):
                        yy = y + i - r
                        if yy < 0:
                            yy = 0
                        elif yy > h - 1:
                            yy = h - 1
                        acc += w[i] * src[yy, x, c]
                    out[y, x, c] = acc
        return out

    @njit(cache=True)
    def _nb_onion_fill(vals, filled):  # pragma: no cover
        h, width, ch = vals.shape
        offs = _OFFSETS_ARR
        while True:
            remaining = 0
            for y in range(h):
                for x in range(width):
                    if not filled[y, x]:
                        remaining += 1
            if remaining == 0:
                return 0
            new_vals = vals.copy()
            new_filled = filled.copy()
            progressed = False
            for y in range(h):
                for x in range(width):
                    if filled[y, x]:
                        continue
                    cnt = 0
                    for o in range(offs.shape[0]):
                        yy = y + offs[o, 0]
                        xx = x + offs[o, 1]
                        if 0 <= yy < h and 0 <= xx < width and filled[yy, xx]:
                            cnt += 1
                    if cnt == 0:
                        continue
                    for c in range(ch):
                        acc = 0.0
                        for o in range(offs.shape[0]):
                            yy = y + offs[o, 0]
                            xx = x + offs[o, 1]
                            if 0 <= yy < h and 0 <= xx < width and filled[yy, xx]:
                                acc += vals[yy, xx, c]
                        new_vals[y, x, c] = acc / cnt
                    new_filled[y, x] = True
                    progressed = True
            if not progressed:
                return remaining
            vals[:] = new_vals
            filled[:] = new_filled

    def _blur_impl(src, w):
        return _nb_conv_v(_nb_conv_h(src, w), w)

    _onion_impl = _nb_onion_fill
else:
    _blur_impl = _np_blur
    _onion_impl = _np_onion_fill


def blur_float(src: np.ndarray, kernel: int) -> np.ndarray:
    """Separable truncated-Gaussian blur with edge-replicate padding.

    ``src`` is float64 of shape (H, W, C); returns a new float64 array.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 3:
        raise ValueError("blur_float expects an (H, W, C) array")
    if kernel == 1:
        return src.copy()
    return _blur_impl(src, gaussian_weights(kernel))


def dilate_bool(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev-ball dilation of a boolean (H, W) mask. Radius 0 is a copy."""
    mask = np.ascontiguousarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    return _np_dilate(mask, radius)


def onion_fill(vals: np.ndarray, filled: np.ndarray) -> int:
    """Layer-synchronous mean fill of unfilled pixels from their 8-neighbors.

    Mutates ``vals`` (float64 (H, W, C)) and ``filled`` (bool (H, W)) in
    place. Each layer assigns every unfilled pixel with at least one filled
    neighbor the mean of its *previously* filled neighbors, so the result
    does not depend on traversal order. Returns the number of pixels that
    could not be filled (nonzero only when no seed pixels exist).
    """
    if vals.dtype != np.float64 or filled.dtype != bool:
        raise ValueError("onion_fill expects float64 values and a bool fill mask")
    return _onion_impl(vals, filled)


def round_to_byte(arr: np.ndarray) -> np.ndarray:
    """Round float intensities half-up to uint8 with clipping."""
    return np.clip(np.floor(arr + 0.5), 0.0, 255.0).astype(np.uint8)
