"""Core array math: centered orthonormal 2D FFT, Daubechies 4-tap wavelet, soft threshold.

All operations are pure functions of their inputs and run in double precision.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Daubechies 4-tap orthogonal filter pair, periodic boundary. Low-pass taps are
# (1+sqrt3, 3+sqrt3, 3-sqrt3, 1-sqrt3)/(4 sqrt2) rounded to double; the
# high-pass is the quadrature mirror g[m] = (-1)^m h[3-m].
DB4_LO = np.array(
    [
        0.48296291314453416,
        0.83651630373780790,
        0.22414386804201338,
        -0.12940952255126038,
    ]
)
DB4_HI = np.array([DB4_LO[3], -DB4_LO[2], DB4_LO[1], -DB4_LO[0]])


def _check_2d_trailing(x, name):
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise InvalidArgumentError(
            f"{name} must have trailing dims >= 2x2, got shape {x.shape}"
        )


def fft2c(img):
    """Centered orthonormal 2D FFT over the trailing two axes.

    The DC term lands at the grid center and Parseval holds exactly
    (unitary 1/sqrt(HW) scaling).
    """
    img = np.asarray(img, dtype=np.complex128)
    _check_2d_trailing(img, "image")
    shifted = np.fft.ifftshift(img, axes=(-2, -1))
    ksp = np.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(ksp, axes=(-2, -1))


def ifft2c(ksp):
    """Inverse of :func:`fft2c`; exact round trip for any shape."""
    ksp = np.asarray(ksp, dtype=np.complex128)
    _check_2d_trailing(ksp, "kspace")
    shifted = np.fft.ifftshift(ksp, axes=(-2, -1))
    img = np.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


@dataclass
class WaveletCoeffs:
    """Critically sampled separable wavelet coefficients.

    ``ll`` is the approximation at the deepest level; ``details`` holds one
    (lh, hl, hh) triple per level, deepest first. Total coefficient count
    equals the source pixel count.
    """

    levels: int
    ll: np.ndarray
    details: list

    def subbands(self):
        yield self.ll
        for lh, hl, hh in self.details:
            yield lh
            yield hl
            yield hh

    def norm(self):
        return np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in self.subbands()))

    def map(self, fn):
        return WaveletCoeffs(
            levels=self.levels,
            ll=fn(self.ll),
            details=[(fn(lh), fn(hl), fn(hh)) for lh, hl, hh in self.details],
        )


def _analysis_1d(x, axis):
    """One periodic analysis step along ``axis``; returns (low, high)."""
    n = x.shape[axis]
    x = np.moveaxis(x, axis, -1)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    windows = x[..., idx]  # (..., n//2, 4)
    low = windows @ DB4_LO
    high = windows @ DB4_HI
    return np.moveaxis(low, -1, axis), np.moveaxis(high, -1, axis)


def _synthesis_1d(low, high, axis):
    """Inverse of :func:`_analysis_1d` (transpose of the orthogonal analysis)."""
    low = np.moveaxis(low, axis, -1)
    high = np.moveaxis(high, axis, -1)
    half = low.shape[-1]
    n = 2 * half
    out = np.zeros(low.shape[:-1] + (n,), dtype=np.promote_types(low.dtype, high.dtype))
    base = 2 * np.arange(half)
    for m in range(4):
        idx = (base + m) % n
        np.add.at(out, (..., idx), DB4_LO[m] * low + DB4_HI[m] * high)
    return np.moveaxis(out, -1, axis)


def dwt2(img, levels):
    """Multi-level separable Daubechies 4-tap transform with periodic wrap.

    Requires both dims divisible by 2**levels. The transform is orthogonal:
    energy is preserved and :func:`idwt2` inverts it exactly.
    """
    img = np.asarray(img, dtype=np.complex128)
    if img.ndim != 2:
        raise InvalidArgumentError(f"image must be 2D, got shape {img.shape}")
    if levels < 1:
        raise InvalidArgumentError("levels must be >= 1")
    h, w = img.shape
    step = 2**levels
    if h % step or w % step:
        raise InvalidArgumentError(
            f"dims {img.shape} not divisible by 2^{levels}"
        )
    details = []
    ll = img
    for _ in range(levels):
        lo_r, hi_r = _analysis_1d(ll, axis=0)
        ll_, lh = _analysis_1d(lo_r, axis=1)
        hl, hh = _analysis_1d(hi_r, axis=1)
        details.append((lh, hl, hh))
        ll = ll_
    details.reverse()
    return WaveletCoeffs(levels=levels, ll=ll, details=details)


def idwt2(coeffs):
    """Exact inverse of :func:`dwt2`."""
    ll = np.asarray(coeffs.ll, dtype=np.complex128)
    if len(coeffs.details) != coeffs.levels:
        raise InvalidArgumentError("detail count does not match levels")
    for lh, hl, hh in coeffs.details:
        lh = np.asarray(lh, dtype=np.complex128)
        hl = np.asarray(hl, dtype=np.complex128)
        hh = np.asarray(hh, dtype=np.complex128)
        if not (ll.shape == lh.shape == hl.shape == hh.shape):
            raise InvalidArgumentError(
                f"malformed subband shapes {ll.shape}/{lh.shape}/{hl.shape}/{hh.shape}"
            )
        lo_r = _synthesis_1d(ll, lh, axis=1)
        hi_r = _synthesis_1d(hl, hh, axis=1)
        ll = _synthesis_1d(lo_r, hi_r, axis=0)
    return ll


def soft_threshold_array(arr, tau):
    """Complex soft threshold: w -> w * max(|w|-tau, 0)/|w| (0 where w == 0)."""
    if tau < 0:
        raise InvalidArgumentError("tau must be nonnegative")
    mag = np.abs(arr)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = np.maximum(mag[nz] - tau, 0.0) / mag[nz]
    return arr * scale


def soft_threshold(coeffs, tau):
    """Soft-threshold every wavelet coefficient (the POCS sparsity projection)."""
    if tau < 0:
        raise InvalidArgumentError("tau must be nonnegative")
    return coeffs.map(lambda b: soft_threshold_array(b, tau))
