"""Image-quality metrics and the fine-tuning convergence criterion."""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CONVERGENCE_RATIO = 0.0005  # 0.05% of the reference PSNR


@dataclass
class MetricsRecord:
    psnr_db: float
    ssim: float
    method: str
    accel: float
    n_train: int
    n_tune: int
    seed: int
    image_id: str


def _magnitudes(ref, test):
    ref = np.abs(np.asarray(ref, dtype=np.complex128))
    test = np.abs(np.asarray(test, dtype=np.complex128))
    if ref.shape != test.shape:
        raise InvalidArgumentError(
            f"shape mismatch: ref {ref.shape} vs test {test.shape}"
        )
    return ref, test


def psnr(ref, test):
    """Peak signal-to-noise ratio in dB; peak is the reference's max magnitude.

    Identical inputs return +inf. An all-zero reference has no peak and raises.
    """
    ref, test = _magnitudes(ref, test)
    peak = float(ref.max())
    if peak == 0.0:
        raise InvalidArgumentError("reference image is all zero; peak undefined")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(ref, test, data_range=None):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), valid mode.

    ``data_range`` defaults to the reference peak so unnormalized inputs stay
    meaningful; pass it explicitly to make the score symmetric in (ref, test).
    """
    ref, test = _magnitudes(ref, test)
    h, w = ref.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    if data_range is None:
        data_range = float(ref.max())
    if data_range <= 0:
        raise InvalidArgumentError("data range must be positive")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(img):
        view = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.einsum("hwkl,kl->hw", view, win, optimize=True)

    mu_x = filt(ref)
    mu_y = filt(test)
    sxx = filt(ref * ref) - mu_x * mu_x
    syy = filt(test * test) - mu_y * mu_y
    sxy = filt(ref * test) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def convergence_samples(psnr_curve, ref_psnr):
    """Smallest n_tune whose PSNR increment drops below 0.05% of ref_psnr.

    ``psnr_curve`` is a sorted list of (n_tune, psnr) pairs. Returns
    (n_tune, converged); when no increment falls below the threshold the last
    n_tune is returned with converged=False.
    """
    if len(psnr_curve) < 2:
        raise InvalidArgumentError("curve needs at least two points")
    n_vals = [n for n, _ in psnr_curve]
    if any(b <= a for a, b in zip(n_vals, n_vals[1:])):
        raise InvalidArgumentError("curve must be sorted by strictly increasing n_tune")
    threshold = CONVERGENCE_RATIO * ref_psnr
    for (_, prev), (n, cur) in zip(psnr_curve, psnr_curve[1:]):
        if abs(cur - prev) < threshold:
            return n, True
    return psnr_curve[-1][0], False
