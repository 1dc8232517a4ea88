"""Input-validation helpers used by the functional core and the estimator API."""

import numpy as np

from .errors import InvalidArgumentError


def as_complex_image(x, name="image"):
    """Coerce ``x`` to a finite 2D complex128 array."""
    arr = np.asarray(x)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise InvalidArgumentError(f"{name} must be a 2D array, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


def as_real_image(x, name="image", nonneg=False):
    """Coerce ``x`` to a finite 2D float64 array, optionally requiring nonnegativity."""
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        raise InvalidArgumentError(f"{name} must be real-valued")
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a 2D array, got shape {arr.shape}")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    if nonneg and np.any(arr < 0):
        raise InvalidArgumentError(f"{name} must be nonnegative")
    return arr


def as_kspace(y, name="kspace"):
    """Coerce ``y`` to complex128 with shape (coils, H, W); 2D input gains a coil axis."""
    arr = np.asarray(y).astype(np.complex128, copy=False)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"{name} must be 2D or 3D, got shape {arr.shape}")
    return arr


def mask_pattern(mask):
    """Return the boolean pattern of a SamplingMask or a raw boolean array."""
    pattern = getattr(mask, "pattern", mask)
    pattern = np.asarray(pattern)
    if pattern.dtype != bool:
        pattern = pattern.astype(bool)
    if pattern.ndim != 2:
        raise InvalidArgumentError(f"mask must be 2D, got shape {pattern.shape}")
    return pattern


def check_same_shape(a, b, name_a="a", name_b="b"):
    if np.shape(a) != np.shape(b):
        raise InvalidArgumentError(
            f"shape mismatch: {name_a} has {np.shape(a)}, {name_b} has {np.shape(b)}"
        )


def check_grid_match(arr, mask, name="array"):
    """Check that the trailing two dims of ``arr`` match the mask grid."""
    pattern = mask_pattern(mask)
    if np.shape(arr)[-2:] != pattern.shape:
        raise InvalidArgumentError(
            f"{name} grid {np.shape(arr)[-2:]} does not match mask grid {pattern.shape}"
        )
    return pattern
