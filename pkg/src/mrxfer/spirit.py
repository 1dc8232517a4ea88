"""SPIRiT building blocks: kernel calibration, the interpolation operator G,
the calibration-consistency projection, and POCS L1 reconstruction.

The interpolation operator synthesizes each k-space sample from its w x w
neighborhood across all coils (its own center excluded), with circular
boundaries consistent with the periodic image model.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, InvalidArgumentError, NumericalError
from .numerics import dwt2, fft2c, idwt2, ifft2c, soft_threshold
from .validation import as_kspace, check_grid_match

DEFAULT_KERNEL_WIDTH = 7
DEFAULT_TIKHONOV = 1e-2
DEFAULT_LAMBDA_L1 = 1e-3

# near-optimal POCS iteration counts per acceleration factor
SPIRIT_ITERS_BY_R = {2: 20, 4: 30, 6: 45, 8: 65, 10: 80}


def iters_for_accel(accel):
    """Nearest tabulated POCS iteration count for an acceleration factor."""
    key = min(SPIRIT_ITERS_BY_R, key=lambda r: abs(r - accel))
    return SPIRIT_ITERS_BY_R[key]


@dataclass
class SpiritKernel:
    """Per-coil k-space interpolation weights.

    ``weights[c, s, dy, dx]`` multiplies source coil ``s`` at offset
    (dy - w//2, dx - w//2) when synthesizing target coil ``c``. The target
    coil's own center weight is structurally zero.
    """

    coils: int
    width: int
    weights: np.ndarray
    tikhonov: float = DEFAULT_TIKHONOV

    def __post_init__(self):
        if self.width % 2 == 0:
            raise InvalidArgumentError("kernel width must be odd")
        if self.weights.shape != (self.coils, self.coils, self.width, self.width):
            raise InvalidArgumentError(
                f"weights shape {self.weights.shape} does not match "
                f"(coils, coils, width, width)"
            )
        if not np.all(np.isfinite(self.weights.view(np.float64))):
            raise InvalidArgumentError("kernel weights must be finite")


def extract_calibration(ksp, size, mask=None):
    """Central size x size block per coil; the region must be fully sampled."""
    ksp = as_kspace(ksp)
    _, h, w = ksp.shape
    if size > h or size > w:
        raise InvalidArgumentError(f"calibration size {size} exceeds grid {h}x{w}")
    y0 = (h - size) // 2
    x0 = (w - size) // 2
    if mask is not None:
        pattern = check_grid_match(ksp, mask, "kspace")
        if not pattern[y0 : y0 + size, x0 : x0 + size].all():
            raise ConstraintError(
                f"central {size}x{size} region is not fully sampled in the mask"
            )
    return ksp[:, y0 : y0 + size, x0 : x0 + size]


def calibrate_kernel(calib, width=DEFAULT_KERNEL_WIDTH, tikhonov=DEFAULT_TIKHONOV):
    """Least-squares kernel fit on the calibration block.

    Each interior calibration sample is predicted from its width x width x C
    neighborhood minus its own entry; the normal equations are regularized by
    tikhonov times the trace-scaled identity.
    """
    calib = as_kspace(calib)
    coils, ch, cw = calib.shape
    if width % 2 == 0:
        raise InvalidArgumentError("kernel width must be odd")
    if ch < width + 4 or cw < width + 4:
        raise InvalidArgumentError(
            f"calibration block {ch}x{cw} too small for width {width} (need >= width+4)"
        )
    m = width // 2
    if coils == 1 and width == 1:
        return SpiritKernel(
            coils=1, width=1, weights=np.zeros((1, 1, 1, 1), complex), tikhonov=tikhonov
        )

    # rows: all fully interior window centers; columns: (source, dy, dx)
    n_rows = (ch - 2 * m) * (cw - 2 * m)
    n_cols = coils * width * width
    a_full = np.empty((n_rows, n_cols), dtype=np.complex128)
    col = 0
    for s in range(coils):
        for dy in range(-m, m + 1):
            for dx in range(-m, m + 1):
                block = calib[s, m + dy : ch - m + dy, m + dx : cw - m + dx]
                a_full[:, col] = block.ravel()
                col += 1
    center = calib[:, m : ch - m, m : cw - m].reshape(coils, -1)

    weights = np.zeros((coils, coils, width, width), dtype=np.complex128)
    for c in range(coils):
        self_col = c * width * width + (m * width + m)
        keep = np.ones(n_cols, dtype=bool)
        keep[self_col] = False
        a = a_full[:, keep]
        b = center[c]
        ata = a.conj().T @ a
        reg = tikhonov * (np.trace(ata).real / ata.shape[0])
        ata[np.diag_indices_from(ata)] += reg
        try:
            sol = np.linalg.solve(ata, a.conj().T @ b)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"calibration system singular for coil {c}") from exc
        if not np.all(np.isfinite(sol.view(np.float64))):
            raise NumericalError(f"non-finite calibration solution for coil {c}")
        full = np.zeros(n_cols, dtype=np.complex128)
        full[keep] = sol
        weights[c] = full.reshape(coils, width, width)
    return SpiritKernel(coils=coils, width=width, weights=weights, tikhonov=tikhonov)


def _check_coil_axis(ksp, kernel, name):
    ksp = np.asarray(ksp, dtype=np.complex128)
    if ksp.ndim < 3 or ksp.shape[-3] != kernel.coils:
        raise InvalidArgumentError(
            f"{name} must be (..., {kernel.coils}, H, W); got shape {ksp.shape}"
        )
    return ksp


def apply_G(ksp, kernel):
    """Apply the interpolation operator in k-space (circular boundaries).

    out[c](p) = sum_{s, d} weights[c, s, d] * ksp[s](p + d), linear in the
    input. Accepts (..., C, H, W) stacks; coils sit on axis -3.
    """
    ksp = _check_coil_axis(ksp, kernel, "kspace")
    m = kernel.width // 2
    out = np.zeros_like(ksp)
    for iy in range(kernel.width):
        dy = iy - m
        for ix in range(kernel.width):
            dx = ix - m
            w_slice = kernel.weights[:, :, iy, ix]
            if not w_slice.any():
                continue
            rolled = np.roll(ksp, shift=(-dy, -dx), axis=(-2, -1))
            out += np.einsum("cs,...shw->...chw", w_slice, rolled)
    return out


def apply_G_adjoint(ksp, kernel):
    """Adjoint of :func:`apply_G` under the standard complex inner product."""
    ksp = _check_coil_axis(ksp, kernel, "kspace")
    m = kernel.width // 2
    out = np.zeros_like(ksp)
    for iy in range(kernel.width):
        dy = iy - m
        for ix in range(kernel.width):
            dx = ix - m
            w_slice = kernel.weights[:, :, iy, ix]
            if not w_slice.any():
                continue
            rolled = np.roll(ksp, shift=(dy, dx), axis=(-2, -1))
            out += np.einsum("cs,...chw->...shw", np.conj(w_slice), rolled)
    return out


def cc_projection(img_stack, kernel):
    """Calibration-consistency projection: per-coil FFT then G; returns k-space."""
    if kernel is None:
        raise InvalidArgumentError("calibration kernel is missing")
    stack = as_kspace(img_stack, "image stack")
    return apply_G(fft2c(stack), kernel)


def _dc_replace(y, y_u, pattern):
    return np.where(pattern, y_u, y)


def pocs_spirit(y_u, mask, kernel, lambda_l1=DEFAULT_LAMBDA_L1, iters=30, levels=4):
    """POCS reconstruction alternating CC, wavelet soft-threshold, and hard DC.

    Starts from the zero-filled k-space and returns per-coil images.
    Acquired samples are restored exactly on every iteration.
    """
    y_u = as_kspace(y_u)
    pattern = check_grid_match(y_u, mask, "kspace")
    if kernel.coils != y_u.shape[0]:
        raise InvalidArgumentError("kernel coil count does not match data")
    y = np.where(pattern, y_u, 0.0)
    for it in range(iters):
        y = apply_G(y, kernel)
        if lambda_l1 > 0:
            imgs = ifft2c(y)
            thresholded = []
            for c in range(imgs.shape[0]):
                coeffs = soft_threshold(dwt2(imgs[c], levels), lambda_l1)
                thresholded.append(idwt2(coeffs))
            y = fft2c(np.stack(thresholded))
        y = _dc_replace(y, y_u, pattern)
        if not np.all(np.isfinite(y.view(np.float64))):
            raise NumericalError(f"NaN/Inf detected at POCS iteration {it}")
    return ifft2c(y)
