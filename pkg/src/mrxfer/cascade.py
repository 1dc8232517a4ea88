"""Cascaded reconstruction network: conv subnetworks interleaved with
data-consistency (and, for multi-coil, calibration-consistency) projections.

Single-coil subnetworks emit a one-channel magnitude image that is
re-complexified with the phase of their input before the DC projection.
Multi-coil subnetworks emit a two-channel (real, imag) correction that is
added to the coil-combined input; the correction is lifted back to k-space
through the coil maps, so a zero-weight cascade degenerates to the
unregularized POCS iteration with the same kernel.

The compute kernels are batched over a leading sample axis; the public
forward functions take single images and wrap them in a batch of one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import fft2c, ifft2c
from .spirit import apply_G
from .validation import as_kspace, check_grid_match

DEFAULT_SUBNETS = 5
DEFAULT_HIDDEN_CHANNELS = 64
DEFAULT_HIDDEN_LAYERS = 3
DEFAULT_KERNEL_SIZE = 3


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out, in, kh, kw), real
    bias: np.ndarray  # (out,), real
    activation: str = "relu"

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise InvalidArgumentError("conv weights must be 4D (out, in, kh, kw)")
        if self.weights.shape[2] % 2 == 0 or self.weights.shape[3] % 2 == 0:
            raise InvalidArgumentError("kernel dims must be odd")
        if self.activation not in ("relu", "none"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")


@dataclass
class Subnetwork:
    layers: list

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weights.shape[0] != nxt.weights.shape[1]:
                raise InvalidArgumentError("channel chain inconsistent between layers")
        if self.layers and self.layers[0].weights.shape[1] != 2:
            raise InvalidArgumentError("input layer must take 2 channels (real, imag)")


@dataclass
class CascadeModel:
    subnets: list
    mode: str  # "single-coil" | "multi-coil"
    lambda_dc: float = np.inf
    coils: int = None
    kernel: object = None  # SpiritKernel for multi-coil mode
    kernel_id: str = None
    hidden_channels: int = DEFAULT_HIDDEN_CHANNELS
    seed: int = 0

    def __post_init__(self):
        if len(self.subnets) < 1:
            raise InvalidArgumentError("cascade needs at least one subnetwork")
        if self.mode not in ("single-coil", "multi-coil"):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")

    @property
    def depth(self):
        return len(self.subnets)


def _he_uniform(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_subnetwork(
    rng,
    out_channels,
    hidden_channels=DEFAULT_HIDDEN_CHANNELS,
    hidden_layers=DEFAULT_HIDDEN_LAYERS,
    kernel_size=DEFAULT_KERNEL_SIZE,
):
    """Input conv (2->hidden) + hidden convs + linear output conv, He-uniform."""
    chain = [2] + [hidden_channels] * (hidden_layers + 1) + [out_channels]
    layers = []
    for i, (cin, cout) in enumerate(zip(chain, chain[1:])):
        act = "none" if i == len(chain) - 2 else "relu"
        layers.append(
            ConvLayer(
                weights=_he_uniform(rng, (cout, cin, kernel_size, kernel_size)),
                bias=np.zeros(cout),
                activation=act,
            )
        )
    return Subnetwork(layers=layers)


def build_cascade_model(
    mode,
    subnets=DEFAULT_SUBNETS,
    hidden_channels=DEFAULT_HIDDEN_CHANNELS,
    hidden_layers=DEFAULT_HIDDEN_LAYERS,
    kernel_size=DEFAULT_KERNEL_SIZE,
    lambda_dc=np.inf,
    coils=None,
    kernel=None,
    kernel_id=None,
    seed=0,
):
    """Seeded cascade; single-coil heads emit 1 channel, multi-coil 2."""
    out_channels = 1 if mode == "single-coil" else 2
    seqs = np.random.SeedSequence(seed).spawn(subnets)
    nets = [
        build_subnetwork(
            np.random.default_rng(seq),
            out_channels,
            hidden_channels,
            hidden_layers,
            kernel_size,
        )
        for seq in seqs
    ]
    return CascadeModel(
        subnets=nets,
        mode=mode,
        lambda_dc=lambda_dc,
        coils=coils,
        kernel=kernel,
        kernel_id=kernel_id,
        hidden_channels=hidden_channels,
        seed=seed,
    )


def model_parameters(model):
    """Flat ordered list of parameter arrays (weights, bias per layer per subnet)."""
    params = []
    for net in model.subnets:
        for layer in net.layers:
            params.append(layer.weights)
            params.append(layer.bias)
    return params


def _patch_matrix(x, kh, kw):
    """(Ci*kh*kw, B*H*W) patch matrix of a zero-padded (B, Ci, H, W) stack."""
    b, ci, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    xp = np.moveaxis(xp, 1, 0)  # (Ci, B, H+2p, W+2p)
    cols = np.empty((ci, kh * kw, b * h * w))
    t = 0
    for ky in range(kh):
        for kx in range(kw):
            cols[:, t, :] = xp[:, :, ky : ky + h, kx : kx + w].reshape(ci, b * h * w)
            t += 1
    return cols.reshape(ci * kh * kw, b * h * w)


def conv2d_same(x, weights, bias):
    """Zero-padded same-size 2D cross-correlation over a (B, Cin, H, W) stack.

    One (Cout x Ci*kh*kw) GEMM against the patch matrix keeps BLAS efficient.
    """
    b, ci, h, w = x.shape
    co, _, kh, kw = weights.shape
    cols = _patch_matrix(x, kh, kw)
    out = weights.reshape(co, -1) @ cols  # (Co, B*H*W)
    out = np.moveaxis(out.reshape(co, b, h, w), 0, 1)
    return out + bias[None, :, None, None]


@dataclass
class SubnetTrace:
    """Forward intermediates needed by reverse-mode differentiation."""

    x_in: np.ndarray  # complex subnet input (B, H, W)
    layer_inputs: list  # channel stacks entering each conv
    pre_acts: list  # pre-activation outputs of each conv
    head: np.ndarray  # channel output of the last conv (B, n_out, H, W)
    out: np.ndarray  # complex subnet output (B, H, W)


def _phase_of(x):
    rho = np.abs(x)
    phase = np.ones_like(x)
    nz = rho > 0
    phase[nz] = x[nz] / rho[nz]
    return rho, phase


def subnet_apply(x, net, mode):
    """Run one subnetwork on a (B, H, W) complex batch; returns (out, trace)."""
    h = np.stack([x.real, x.imag], axis=1)
    layer_inputs = []
    pre_acts = []
    for layer in net.layers:
        layer_inputs.append(h)
        pre = conv2d_same(h, layer.weights, layer.bias)
        pre_acts.append(pre)
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    if mode == "single-coil":
        _, phase = _phase_of(x)
        out = h[:, 0] * phase
    else:
        out = x + (h[:, 0] + 1j * h[:, 1])
    return out, SubnetTrace(
        x_in=x, layer_inputs=layer_inputs, pre_acts=pre_acts, head=h, out=out
    )


def subnet_forward(x, net, mode="single-coil"):
    """Subnetwork output as a DC-ready complex image.

    Single-coil: magnitude head re-complexified with the input's phase.
    Multi-coil: input plus the two-channel complex correction.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise InvalidArgumentError("subnet_forward takes a single 2D image")
    if net.layers[0].weights.shape[1] != 2:
        raise InvalidArgumentError("subnetwork input layer must take 2 channels")
    out, _ = subnet_apply(x[None], net, mode)
    return out[0]


def dc_kspace(y, y_u, pattern, lam):
    """Blend reconstructed and acquired k-space on the sampled set."""
    if np.isinf(lam):
        return np.where(pattern, y_u, y)
    return np.where(pattern, (y + lam * y_u) / (1.0 + lam), y)


def dc_lambda_diag(pattern, lam):
    """Diagonal of the DC gradient operator: 1/(1+lambda) on the sampled set, 1 off."""
    diag = np.ones(pattern.shape)
    diag[pattern] = 0.0 if np.isinf(lam) else 1.0 / (1.0 + lam)
    return diag


def dc_layer(c_out, y_u, mask, lam=np.inf):
    """Data-consistency projection of an image-domain network output."""
    c_out = np.asarray(c_out, dtype=np.complex128)
    y_u = np.asarray(y_u, dtype=np.complex128)
    pattern = check_grid_match(y_u, mask, "kspace")
    if not np.isinf(lam) and lam <= 0:
        raise InvalidArgumentError("lambda must be positive or infinite")
    y = fft2c(c_out)
    return ifft2c(dc_kspace(y, y_u, pattern, lam))


def coil_lift(x, maps):
    """Image-to-k-space through the coil maps: per coil fft2c(map * x)."""
    return fft2c(maps * x[..., None, :, :])


def coil_project(y, maps):
    """Adjoint of :func:`coil_lift`: conjugate-map combine of ifft2c(y)."""
    return np.sum(np.conj(maps) * ifft2c(y), axis=-3)


def cascade_batch_single(y_u, pattern, model):
    """Batched single-coil cascade on (B, H, W) stacks; returns (image, kspace)."""
    y_u = np.where(pattern, y_u, 0.0)
    x = ifft2c(y_u)
    y = y_u
    for net in model.subnets:
        out, _ = subnet_apply(x, net, "single-coil")
        y = dc_kspace(fft2c(out), y_u, pattern, model.lambda_dc)
        x = ifft2c(y)
    return x, y


def cascade_batch_multi(y_u, pattern, model, maps, kernel=None):
    """Batched multi-coil cascade on (B, C, H, W) stacks; returns (image, kspace).

    Per stage: CC then DC; combine to image; add the subnetwork correction
    lifted through the coil maps; DC again.
    """
    kernel = kernel if kernel is not None else model.kernel
    if kernel is None:
        raise InvalidArgumentError("multi-coil cascade requires a calibration kernel")
    if maps is None:
        raise InvalidArgumentError("multi-coil cascade requires coil maps")
    pat = pattern[:, None]  # broadcast over coils
    y_u = np.where(pat, y_u, 0.0)
    lam = model.lambda_dc
    y = y_u.copy()
    for net in model.subnets:
        y = dc_kspace(apply_G(y, kernel), y_u, pat, lam)
        x = coil_project(y, maps)
        out, _ = subnet_apply(x, net, "multi-coil")
        y = y + coil_lift(out - x, maps)
        y = dc_kspace(y, y_u, pat, lam)
    return coil_project(y, maps), y


def cascade_forward_single(y_u, mask, model, return_kspace=False):
    """Single-coil cascade: zero-filled start, then subnet + DC per stage."""
    if model.mode != "single-coil":
        raise InvalidArgumentError("model is not in single-coil mode")
    y_u = np.asarray(y_u, dtype=np.complex128)
    pattern = check_grid_match(y_u, mask, "kspace")
    x, y = cascade_batch_single(y_u[None], pattern[None], model)
    if return_kspace:
        return x[0], y[0]
    return x[0]


def cascade_forward_multi(y_u, mask, model, maps, return_kspace=False, kernel=None):
    """Multi-coil cascade; returns the coil-combined image."""
    if model.mode != "multi-coil":
        raise InvalidArgumentError("model is not in multi-coil mode")
    y_u = as_kspace(y_u)
    pattern = check_grid_match(y_u, mask, "kspace")
    maps = np.asarray(maps, dtype=np.complex128)
    x, y = cascade_batch_multi(
        y_u[None], pattern[None], model, maps[None], kernel=kernel
    )
    if return_kspace:
        return x[0], y[0]
    return x[0]


def cascade_forward(y_u, mask, model, maps=None, return_kspace=False):
    if model.mode == "single-coil":
        return cascade_forward_single(y_u, mask, model, return_kspace)
    return cascade_forward_multi(y_u, mask, model, maps, return_kspace)
