"""Losses, reverse-mode gradients through the cascade, ADAM, and the
train-then-fine-tune workflow.

Gradients are computed by explicit adjoints: correlation transpose for convs,
positive-part masks for ReLU, the diagonal-in-k-space operator for DC, the
kernel adjoint for CC, and the conjugate coil maps for combine/lift. Complex
quantities carry packed real gradients (d/dRe + i d/dIm). All compute is
batched over a leading sample axis.
"""

from dataclasses import dataclass

import numpy as np

from .cascade import (
    _patch_matrix,
    cascade_batch_multi,
    cascade_batch_single,
    coil_lift,
    coil_project,
    dc_kspace,
    dc_lambda_diag,
    model_parameters,
    subnet_apply,
)
from .errors import InvalidArgumentError, NumericalError
from .metrics import psnr, ssim
from .numerics import fft2c, ifft2c
from .spirit import apply_G, apply_G_adjoint
from .validation import mask_pattern


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-6
    batch: int = 50
    epochs_per_subnet: int = 20
    finetune_lr: float = 1e-5
    finetune_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidArgumentError("beta1/beta2 must lie in (0, 1)")
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be > 0")
        if self.finetune_lr < 0:
            raise InvalidArgumentError("finetune_lr must be >= 0")
        if self.batch < 1 or self.epochs_per_subnet < 0 or self.finetune_epochs < 0:
            raise InvalidArgumentError("batch/epoch counts must be nonnegative")


@dataclass
class GradientTape:
    grads: list
    loss: float


@dataclass
class TrainSample:
    y_u: np.ndarray
    mask: object
    ref: np.ndarray
    maps: np.ndarray = None


def recon_loss(pred, ref, params=(), gamma=0.0):
    """MSE plus MAE over pixels (and batch), plus gamma * sum of squared params."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise InvalidArgumentError(
            f"shape mismatch: pred {pred.shape} vs ref {ref.shape}"
        )
    r = pred - ref
    mag = np.abs(r)
    loss = float(np.mean(mag**2) + np.mean(mag))
    for p in params:
        loss += gamma * float(np.sum(np.asarray(p) ** 2))
    return loss


def _loss_grad(pred, ref, n_total):
    """Packed gradient of the (sum-normalized) MSE+MAE terms w.r.t. pred."""
    r = pred - ref
    mag = np.abs(r)
    g = 2.0 * r / n_total
    nz = mag > 0
    if np.iscomplexobj(r):
        g = g.astype(np.complex128)
        g[nz] += (r[nz] / mag[nz]) / n_total
    else:
        g = g + np.sign(r) / n_total
    return g


# ---------------------------------------------------------------------------
# layer-level adjoints (batched over the leading axis)


def _conv2d_backward(x, weights, g_pre):
    """Gradients of a same-size zero-padded correlation.

    ``x`` is the (B, Cin, H, W) input stack and ``g_pre`` the (B, Cout, H, W)
    upstream gradient w.r.t. the pre-activation output. Returns (dW, db, dx)
    with dW/db summed over the batch.
    """
    b, ci, h, w = x.shape
    co, _, kh, kw = weights.shape
    ph, pw = kh // 2, kw // 2
    cols = _patch_matrix(x, kh, kw)  # (Ci*kh*kw, B*H*W)
    g2 = np.ascontiguousarray(np.moveaxis(g_pre, 1, 0)).reshape(co, b * h * w)
    d_w = (g2 @ cols.T).reshape(co, ci, kh, kw)
    d_b = g_pre.sum(axis=(0, 2, 3))
    dcols = (weights.reshape(co, -1).T @ g2).reshape(ci, kh * kw, b, h, w)
    dxp = np.zeros((ci, b, h + 2 * ph, w + 2 * pw))
    t = 0
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, :, ky : ky + h, kx : kx + w] += dcols[:, t]
            t += 1
    d_x = np.moveaxis(dxp[:, :, ph : ph + h, pw : pw + w], 0, 1)
    return d_w, d_b, d_x


def subnet_head_backward(net, trace, g_head):
    """Backprop channel gradients through the conv stack.

    Returns (layer grads as [(dW, db), ...], gradient on the 2-channel input).
    """
    g = g_head
    layer_grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        if layer.activation == "relu":
            g = g * (trace.pre_acts[li] > 0)
        d_w, d_b, g = _conv2d_backward(trace.layer_inputs[li], layer.weights, g)
        layer_grads[li] = (d_w, d_b)
    return layer_grads, g


def _complexify_backward(g_out, x_in, m):
    """Adjoint of out = m * exp(i*angle(x_in)).

    Returns (g_m, g_x): the magnitude-channel gradient and the phase-path
    gradient on the subnet input. The phase is treated as constant at x == 0.
    """
    rho = np.abs(x_in)
    nz = rho > 0
    phase = np.ones_like(x_in)
    phase[nz] = x_in[nz] / rho[nz]
    radial = (np.conj(g_out) * phase).real
    g_m = radial
    g_x = np.zeros_like(x_in)
    g_x[nz] = (m[nz] / rho[nz]) * (g_out[nz] - radial[nz] * phase[nz])
    return g_m, g_x


def subnet_backward(net, trace, g_out, mode):
    """Backprop through one subnetwork (batched).

    Single-coil: ``g_out`` is w.r.t. the complexified magnitude output; the
    returned input gradient includes the phase path. Multi-coil: ``g_out`` is
    w.r.t. the trunk correction only; the caller owns the identity path.
    """
    if mode == "single-coil":
        m = trace.head[:, 0]
        g_m, g_phase = _complexify_backward(g_out, trace.x_in, m)
        layer_grads, g_ch = subnet_head_backward(net, trace, g_m[:, None])
        g_x = (g_ch[:, 0] + 1j * g_ch[:, 1]) + g_phase
    else:
        g_head = np.stack([g_out.real, g_out.imag], axis=1)
        layer_grads, g_ch = subnet_head_backward(net, trace, g_head)
        g_x = g_ch[:, 0] + 1j * g_ch[:, 1]
    return layer_grads, g_x


# ---------------------------------------------------------------------------
# end-to-end forward/backward (batched)


def _forward_trace_single(model, y_u, pattern):
    y_u = np.where(pattern, y_u, 0.0)
    x = ifft2c(y_u)
    traces = []
    for net in model.subnets:
        out, trace = subnet_apply(x, net, "single-coil")
        traces.append(trace)
        x = ifft2c(dc_kspace(fft2c(out), y_u, pattern, model.lambda_dc))
    return x, traces


def _backward_single(model, traces, pattern, g_pred):
    lam_diag = dc_lambda_diag(pattern, model.lambda_dc)
    grads = []
    g_x = g_pred
    for p in range(model.depth - 1, -1, -1):
        g_c = ifft2c(lam_diag * fft2c(g_x))
        layer_grads, g_x = subnet_backward(
            model.subnets[p], traces[p], g_c, "single-coil"
        )
        grads.append(layer_grads)
    grads.reverse()
    return grads


def _forward_trace_multi(model, y_u, pattern, maps, kernel):
    pat = pattern[:, None]
    y_u = np.where(pat, y_u, 0.0)
    lam = model.lambda_dc
    y = y_u.copy()
    traces = []
    for net in model.subnets:
        y = dc_kspace(apply_G(y, kernel), y_u, pat, lam)
        x = coil_project(y, maps)
        out, trace = subnet_apply(x, net, "multi-coil")
        traces.append(trace)
        y = y + coil_lift(out - x, maps)
        y = dc_kspace(y, y_u, pat, lam)
    return coil_project(y, maps), traces


def _backward_multi(model, traces, pattern, maps, kernel, g_pred):
    lam_diag = dc_lambda_diag(pattern, model.lambda_dc)[:, None]
    grads = []
    g_y = coil_lift(g_pred, maps)
    for p in range(model.depth - 1, -1, -1):
        g_y = lam_diag * g_y
        g_r = coil_project(g_y, maps)
        layer_grads, g_x = subnet_backward(
            model.subnets[p], traces[p], g_r, "multi-coil"
        )
        g_y = g_y + coil_lift(g_x, maps)
        g_y = lam_diag * g_y
        g_y = apply_G_adjoint(g_y, kernel)
        grads.append(layer_grads)
    grads.reverse()
    return grads


def _flatten_subnet_grads(per_subnet):
    flat = []
    for layer_grads in per_subnet:
        for d_w, d_b in layer_grads:
            flat.append(d_w)
            flat.append(d_b)
    return flat


def _stack_samples(samples):
    y_u = np.stack([np.asarray(s.y_u, dtype=np.complex128) for s in samples])
    pattern = np.stack([mask_pattern(s.mask) for s in samples])
    refs = np.stack([np.asarray(s.ref) for s in samples])
    maps = None
    if samples[0].maps is not None:
        maps = np.stack([np.asarray(s.maps, dtype=np.complex128) for s in samples])
    return y_u, pattern, refs, maps


def backward(model, samples, gamma=0.0):
    """End-to-end gradients of the reconstruction loss over a batch.

    ``samples`` is a list of TrainSample; multi-coil samples must carry maps
    and the model must hold its calibration kernel. Returns a GradientTape
    whose grads align with :func:`model_parameters` order.
    """
    if not samples:
        raise InvalidArgumentError("empty batch")
    params = model_parameters(model)
    y_u, pattern, refs, maps = _stack_samples(samples)
    n_total = refs.size
    if model.mode == "single-coil":
        pred, traces = _forward_trace_single(model, y_u, pattern)
        refs_c = refs.astype(np.complex128)
        g_pred = _loss_grad(pred, refs_c, n_total)
        per_subnet = _backward_single(model, traces, pattern, g_pred)
        resid = np.abs(pred - refs_c)
    else:
        if maps is None or model.kernel is None:
            raise InvalidArgumentError(
                "multi-coil backward needs sample maps and model.kernel"
            )
        pred, traces = _forward_trace_multi(model, y_u, pattern, maps, model.kernel)
        g_pred = _loss_grad(pred, refs, n_total)
        per_subnet = _backward_multi(
            model, traces, pattern, maps, model.kernel, g_pred
        )
        resid = np.abs(pred - refs)
    loss = float(np.sum(resid**2) + np.sum(resid)) / n_total
    grads = _flatten_subnet_grads(per_subnet)
    if gamma:
        loss += gamma * sum(float(np.sum(p**2)) for p in params)
        for acc, p in zip(grads, params):
            acc += 2.0 * gamma * p
    for gi, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {_param_name(model, gi)}")
    return GradientTape(grads=grads, loss=loss)


def _param_name(model, flat_index):
    i = 0
    for p, net in enumerate(model.subnets):
        for li in range(len(net.layers)):
            for kind in ("weights", "bias"):
                if i == flat_index:
                    return f"subnet {p} layer {li} {kind}"
                i += 1
    return f"parameter {flat_index}"


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state, config, lr=None):
    """Bias-corrected ADAM update, in place; weight decay rides in the grads."""
    if lr is None:
        lr = config.lr
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return state


# ---------------------------------------------------------------------------
# training drivers


def _sample_kspace(model, dataset, i):
    """Fully sampled k-space, reference, and maps for one dataset item."""
    img = np.asarray(dataset.images[i])
    if model.mode == "multi-coil":
        maps = dataset.maps_for(i)
        if maps is None:
            raise InvalidArgumentError("multi-coil training needs coil maps")
        y_full = fft2c(maps * img.astype(np.complex128)[None])
        ref = img.astype(np.complex128)
    else:
        maps = None
        y_full = fft2c(img.astype(np.complex128))
        ref = img
    return y_full, ref, maps


def _gather_batch(model, dataset, idx, masks):
    """Stacked (y_u, pattern, refs, maps) for the given items and masks."""
    y_list, p_list, r_list, m_list = [], [], [], []
    for i, mask in zip(idx, masks):
        pattern = mask_pattern(mask)
        y_full, ref, maps = _sample_kspace(model, dataset, int(i))
        y_list.append(np.where(pattern if y_full.ndim == 2 else pattern[None],
                               y_full, 0.0))
        p_list.append(pattern)
        r_list.append(ref)
        m_list.append(maps)
    y_u = np.stack(y_list)
    pattern = np.stack(p_list)
    refs = np.stack(r_list)
    maps = np.stack(m_list) if m_list[0] is not None else None
    return y_u, pattern, refs, maps


def _prefix_input_single(model, depth, y_u, pattern):
    x = ifft2c(y_u)
    for q in range(depth):
        out, _ = subnet_apply(x, model.subnets[q], "single-coil")
        x = ifft2c(dc_kspace(fft2c(out), y_u, pattern, model.lambda_dc))
    return x


def _prefix_input_multi(model, depth, y_u, pattern, maps, kernel):
    pat = pattern[:, None]
    lam = model.lambda_dc
    y = y_u.copy()
    for q in range(depth):
        y = dc_kspace(apply_G(y, kernel), y_u, pat, lam)
        x = coil_project(y, maps)
        out, _ = subnet_apply(x, model.subnets[q], "multi-coil")
        y = dc_kspace(y + coil_lift(out - x, maps), y_u, pat, lam)
    y = dc_kspace(apply_G(y, kernel), y_u, pat, lam)
    return coil_project(y, maps)


def _subnet_params(net):
    params = []
    for layer in net.layers:
        params.append(layer.weights)
        params.append(layer.bias)
    return params


def _batch_masks(mask_bank, start, m):
    bank_size = len(mask_bank)
    return [mask_bank[(start + j) % bank_size] for j in range(m)]


def train_sequential(model, dataset, mask_bank, config, val_dataset=None,
                     on_subnet_end=None):
    """Train each subnetwork in turn with all predecessors frozen.

    Every training sample is re-paired with a bank mask each epoch under the
    epoch seed. Deterministic given (model seed, config.seed, data).
    Returns a per-epoch history list; the model is updated in place.
    ``on_subnet_end(p, model)`` fires after each subnetwork finishes (used for
    checkpointing).
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("empty dataset")
    if model.mode == "multi-coil" and model.kernel is None:
        raise InvalidArgumentError("multi-coil training requires model.kernel")
    n = len(dataset)
    history = []
    for p in range(model.depth):
        net = model.subnets[p]
        params = _subnet_params(net)
        state = AdamState.for_params(params)
        for epoch in range(config.epochs_per_subnet):
            rng = np.random.default_rng([config.seed, 1, p, epoch])
            order = rng.permutation(n)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, n, config.batch):
                idx = order[start : start + config.batch]
                masks = _batch_masks(mask_bank, start, len(idx))
                y_u, pattern, refs, maps = _gather_batch(model, dataset, idx, masks)
                n_total = refs.size
                if model.mode == "single-coil":
                    x_ip = _prefix_input_single(model, p, y_u, pattern)
                    _, trace = subnet_apply(x_ip, net, "single-coil")
                    pred = trace.head[:, 0]
                else:
                    x_ip = _prefix_input_multi(
                        model, p, y_u, pattern, maps, model.kernel
                    )
                    pred, trace = subnet_apply(x_ip, net, "multi-coil")
                resid = np.abs(pred - refs)
                batch_loss = float(np.sum(resid**2) + np.sum(resid)) / n_total
                g_out = _loss_grad(pred, refs, n_total)
                if model.mode == "single-coil":
                    layer_grads, _ = subnet_head_backward(net, trace, g_out[:, None])
                else:
                    g_head = np.stack([g_out.real, g_out.imag], axis=1)
                    layer_grads, _ = subnet_head_backward(net, trace, g_head)
                grads = []
                for d_w, d_b in layer_grads:
                    grads.append(d_w)
                    grads.append(d_b)
                if config.weight_decay:
                    batch_loss += config.weight_decay * sum(
                        float(np.sum(q**2)) for q in params
                    )
                    for acc, q in zip(grads, params):
                        acc += 2.0 * config.weight_decay * q
                adam_step(params, grads, state, config)
                epoch_loss += batch_loss
                n_batches += 1
            entry = {
                "phase": "sequential",
                "subnet": p,
                "epoch": epoch,
                "loss": epoch_loss / max(n_batches, 1),
            }
            if val_dataset is not None:
                entry["val_psnr"] = mean_psnr(model, val_dataset, mask_bank)
            history.append(entry)
        if on_subnet_end is not None:
            on_subnet_end(p, model)
    return history


def fine_tune(model, dataset, mask_bank, config, n_tune=None):
    """End-to-end fine-tuning of the whole cascade at the fine-tune rate.

    ``n_tune`` selects the first n items; 0 returns the model unchanged
    (implicit transfer). Gradients flow through every DC/CC projection.
    """
    if n_tune is None:
        n_tune = len(dataset)
    if n_tune == 0:
        return []
    if len(dataset) == 0:
        raise InvalidArgumentError("empty dataset")
    if n_tune > len(dataset):
        raise InvalidArgumentError(
            f"n_tune {n_tune} exceeds the fine-tune split size {len(dataset)}"
        )
    if model.mode == "multi-coil" and model.kernel is None:
        raise InvalidArgumentError("multi-coil fine-tuning requires model.kernel")
    params = model_parameters(model)
    state = AdamState.for_params(params)
    history = []
    for epoch in range(config.finetune_epochs):
        rng = np.random.default_rng([config.seed, 2, 0, epoch])
        order = rng.permutation(n_tune)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_tune, config.batch):
            idx = order[start : start + config.batch]
            masks = _batch_masks(mask_bank, start, len(idx))
            samples = []
            for i, mask in zip(idx, masks):
                pattern = mask_pattern(mask)
                y_full, ref, maps = _sample_kspace(model, dataset, int(i))
                samples.append(
                    TrainSample(
                        y_u=np.where(
                            pattern if y_full.ndim == 2 else pattern[None],
                            y_full, 0.0,
                        ),
                        mask=mask,
                        ref=ref,
                        maps=maps,
                    )
                )
            tape = backward(model, samples, gamma=config.weight_decay)
            adam_step(params, tape.grads, state, config, lr=config.finetune_lr)
            epoch_loss += tape.loss
            n_batches += 1
        history.append(
            {
                "phase": "finetune",
                "epoch": epoch,
                "loss": epoch_loss / max(n_batches, 1),
            }
        )
    return history


def _predict_batch(model, dataset, idx, masks):
    y_u, pattern, refs, maps = _gather_batch(model, dataset, idx, masks)
    if model.mode == "single-coil":
        pred, _ = cascade_batch_single(y_u, pattern, model)
    else:
        pred, _ = cascade_batch_multi(y_u, pattern, model, maps)
    return pred, refs


def reconstruct_item(model, dataset, i, mask):
    """Undersample one dataset item with ``mask`` and reconstruct it."""
    pred, refs = _predict_batch(model, dataset, [i], [mask])
    return pred[0], refs[0]


def mean_psnr(model, dataset, mask_bank, chunk=8):
    bank_size = len(mask_bank)
    vals = []
    for start in range(0, len(dataset), chunk):
        idx = list(range(start, min(start + chunk, len(dataset))))
        masks = [mask_bank[i % bank_size] for i in idx]
        preds, refs = _predict_batch(model, dataset, idx, masks)
        for k in range(len(idx)):
            vals.append(psnr(np.abs(refs[k]), np.abs(preds[k])))
    return float(np.mean(vals))


def evaluate_model(model, dataset, mask_bank, chunk=8):
    """Per-item (psnr, ssim) of the model on a dataset with cycled masks."""
    out = []
    bank_size = len(mask_bank)
    for start in range(0, len(dataset), chunk):
        idx = list(range(start, min(start + chunk, len(dataset))))
        masks = [mask_bank[i % bank_size] for i in idx]
        preds, refs = _predict_batch(model, dataset, idx, masks)
        for k in range(len(idx)):
            ref_mag = np.abs(refs[k])
            pred_mag = np.abs(preds[k])
            out.append((psnr(ref_mag, pred_mag), ssim(ref_mag, pred_mag)))
    return out
