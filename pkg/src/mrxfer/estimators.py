"""Scikit-learn style estimator facade over the reconstruction core.

Every reconstructor exposes ``get_params``/``set_params`` via BaseEstimator
and a ``predict(kspace, mask)`` method returning the reconstructed image, so
the algorithms compose with standard pipeline tooling. Fitted state follows
the trailing-underscore convention.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cascade import build_cascade_model, cascade_forward
from .cs import CsParams, nlcg_reconstruct
from .errors import InvalidArgumentError
from .sampling import undersample, zero_filled_recon
from .spirit import (
    DEFAULT_KERNEL_WIDTH,
    DEFAULT_LAMBDA_L1,
    DEFAULT_TIKHONOV,
    calibrate_kernel,
    extract_calibration,
    iters_for_accel,
    pocs_spirit,
)
from .training import TrainConfig, fine_tune, train_sequential
from .validation import mask_pattern


class ZeroFillReconstructor(BaseEstimator):
    """Inverse FFT of zero-filled k-space; stateless."""

    def fit(self, X=None, y=None):
        return self

    def predict(self, kspace, mask=None):
        if mask is not None:
            kspace = undersample(kspace, mask)
        return zero_filled_recon(kspace)


class CsReconstructor(BaseEstimator):
    """Single-coil compressed-sensing reconstruction (wavelet-L1 NLCG)."""

    def __init__(self, lambda_l1=1e-3, iters=80, levels=4, smoothing_eps=1e-15):
        self.lambda_l1 = lambda_l1
        self.iters = iters
        self.levels = levels
        self.smoothing_eps = smoothing_eps

    def fit(self, X=None, y=None):
        return self

    def predict(self, kspace, mask):
        params = CsParams(
            lambda_l1=self.lambda_l1,
            iters=self.iters,
            levels=self.levels,
            smoothing_eps=self.smoothing_eps,
        )
        return nlcg_reconstruct(np.asarray(kspace), mask, params)


class SpiritReconstructor(BaseEstimator):
    """POCS L1 reconstruction with a kernel calibrated from the ACS region."""

    def __init__(
        self,
        kernel_width=DEFAULT_KERNEL_WIDTH,
        tikhonov=DEFAULT_TIKHONOV,
        lambda_l1=DEFAULT_LAMBDA_L1,
        iters=None,
        calib_size=24,
        levels=4,
    ):
        self.kernel_width = kernel_width
        self.tikhonov = tikhonov
        self.lambda_l1 = lambda_l1
        self.iters = iters
        self.calib_size = calib_size
        self.levels = levels

    def fit(self, kspace, mask=None):
        """Calibrate the interpolation kernel from the central k-space block."""
        calib = extract_calibration(kspace, self.calib_size, mask=mask)
        self.kernel_ = calibrate_kernel(calib, self.kernel_width, self.tikhonov)
        return self

    def predict(self, kspace, mask):
        if not hasattr(self, "kernel_"):
            self.fit(kspace, mask)
        pattern = mask_pattern(mask)
        iters = self.iters
        if iters is None:
            accel = getattr(mask, "accel", None) or 1.0 / max(pattern.mean(), 1e-9)
            iters = iters_for_accel(accel)
        return pocs_spirit(
            undersample(kspace, mask),
            pattern,
            self.kernel_,
            lambda_l1=self.lambda_l1,
            iters=iters,
            levels=self.levels,
        )


class CascadeReconstructor(BaseEstimator):
    """Cascaded network reconstructor with sequential training and fine-tuning."""

    def __init__(
        self,
        mode="single-coil",
        subnets=5,
        hidden_channels=64,
        hidden_layers=3,
        lambda_dc=np.inf,
        lr=1e-4,
        weight_decay=1e-6,
        batch=50,
        epochs_per_subnet=20,
        finetune_lr=1e-5,
        finetune_epochs=100,
        seed=0,
    ):
        self.mode = mode
        self.subnets = subnets
        self.hidden_channels = hidden_channels
        self.hidden_layers = hidden_layers
        self.lambda_dc = lambda_dc
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch = batch
        self.epochs_per_subnet = epochs_per_subnet
        self.finetune_lr = finetune_lr
        self.finetune_epochs = finetune_epochs
        self.seed = seed

    def _config(self):
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch=self.batch,
            epochs_per_subnet=self.epochs_per_subnet,
            finetune_lr=self.finetune_lr,
            finetune_epochs=self.finetune_epochs,
            seed=self.seed,
        )

    def fit(self, dataset, mask_bank, kernel=None):
        """Sequentially train the cascade on a dataset with a mask bank."""
        coils = dataset.spec.coils if self.mode == "multi-coil" else None
        self.model_ = build_cascade_model(
            self.mode,
            subnets=self.subnets,
            hidden_channels=self.hidden_channels,
            hidden_layers=self.hidden_layers,
            lambda_dc=self.lambda_dc,
            coils=coils,
            kernel=kernel,
            seed=self.seed,
        )
        self.history_ = train_sequential(
            self.model_, dataset, mask_bank, self._config()
        )
        return self

    def fine_tune(self, dataset, mask_bank, n_tune=None):
        self._check_fitted()
        self.history_ = self.history_ + fine_tune(
            self.model_, dataset, mask_bank, self._config(), n_tune=n_tune
        )
        return self

    def predict(self, kspace, mask, maps=None):
        self._check_fitted()
        if self.mode == "multi-coil" and maps is None:
            raise InvalidArgumentError("multi-coil prediction requires coil maps")
        return cascade_forward(
            undersample(kspace, mask), mask, self.model_, maps=maps
        )

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("CascadeReconstructor is not fitted yet")
