"""MRX1 binary tensor container and the directory formats built on it.

Record layout (little-endian throughout):
  magic   4 bytes  b"MRX1"
  version u32      currently 1
  dtype   u32      0=f32, 1=complex f32 (interleaved), 2=f64, 3=complex f64, 4=u8
  ndim    u32
  dims    u64 * ndim
  payload row-major, last dim fastest

Model and dataset containers are directories holding a JSON manifest plus a
named sequence of MRX1 records concatenated in one file. Round trips are
bit-exact and byte-identical across platforms.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, ConvLayer, Subnetwork
from .datasim import Dataset, DomainSpec
from .errors import (
    BadHeaderError,
    BadMagicError,
    DtypeMismatchError,
    InvalidArgumentError,
    TruncatedPayloadError,
)
from .sampling import MaskBank, SamplingMask
from .spirit import SpiritKernel

MAGIC = b"MRX1"
VERSION = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<c8"),
    2: np.dtype("<f8"),
    3: np.dtype("<c16"),
    4: np.dtype("<u1"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


def _dtype_code(arr):
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt == np.dtype("<f8"):
        return 2
    if dt == np.dtype("<c16"):
        return 3
    if dt == np.dtype("<f4"):
        return 0
    if dt == np.dtype("<c8"):
        return 1
    if dt == np.dtype("<u1") or arr.dtype == bool:
        return 4
    raise DtypeMismatchError(f"unsupported dtype {arr.dtype}")


def write_record(fh, arr):
    arr = np.ascontiguousarray(arr)
    code = _dtype_code(arr)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    arr = arr.astype(_DTYPES[code], copy=False)
    fh.write(MAGIC)
    fh.write(struct.pack("<III", VERSION, code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def read_record(fh):
    magic = fh.read(4)
    if len(magic) < 4:
        raise TruncatedPayloadError("record header truncated")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    head = fh.read(12)
    if len(head) < 12:
        raise TruncatedPayloadError("record header truncated")
    version, code, ndim = struct.unpack("<III", head)
    if version != VERSION:
        raise BadHeaderError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    if ndim > 32:
        raise BadHeaderError(f"implausible ndim {ndim}")
    dims_raw = fh.read(8 * ndim)
    if len(dims_raw) < 8 * ndim:
        raise TruncatedPayloadError("dims truncated")
    dims = struct.unpack(f"<{ndim}Q", dims_raw)
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise TruncatedPayloadError(
            f"payload truncated: expected {count * dtype.itemsize} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor(path, arr):
    with open(path, "wb") as fh:
        write_record(fh, arr)


def load_tensor(path, expect_dtype=None):
    with open(path, "rb") as fh:
        arr = read_record(fh)
    if expect_dtype is not None and arr.dtype != np.dtype(expect_dtype):
        raise DtypeMismatchError(
            f"expected dtype {expect_dtype}, file holds {arr.dtype}"
        )
    return arr


def save_tensors(path, named):
    """Write an ordered name -> array mapping as a concatenated record sequence."""
    with open(path, "wb") as fh:
        for arr in named.values():
            write_record(fh, arr)
    return list(named.keys())


def load_tensors(path, names):
    out = {}
    with open(path, "rb") as fh:
        for name in names:
            out[name] = read_record(fh)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# model container


def save_model(path, model):
    """Model directory: manifest.json plus weights.mrx (named record sequence)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = {}
    arch = []
    for p, net in enumerate(model.subnets):
        layers = []
        for li, layer in enumerate(net.layers):
            wname = f"subnet{p}.layer{li}.weights"
            bname = f"subnet{p}.layer{li}.bias"
            named[wname] = layer.weights
            named[bname] = layer.bias
            layers.append(
                {
                    "activation": layer.activation,
                    "weights": wname,
                    "bias": bname,
                    "shape": list(layer.weights.shape),
                }
            )
        arch.append({"layers": layers})
    manifest = {
        "format": "mrxfer-model",
        "version": 1,
        "mode": model.mode,
        "subnets": arch,
        "lambda_dc": "inf" if np.isinf(model.lambda_dc) else model.lambda_dc,
        "coils": model.coils,
        "hidden_channels": model.hidden_channels,
        "seed": model.seed,
        "kernel_id": model.kernel_id,
        "tensors": list(named.keys()),
    }
    if model.kernel is not None:
        named["kernel.weights"] = model.kernel.weights
        manifest["kernel"] = {
            "coils": model.kernel.coils,
            "width": model.kernel.width,
            "tikhonov": model.kernel.tikhonov,
            "tensor": "kernel.weights",
        }
        manifest["tensors"].append("kernel.weights")
    save_tensors(path / "weights.mrx", named)
    _write_json(path / "manifest.json", manifest)


def load_model(path):
    path = Path(path)
    manifest = _read_json(path / "manifest.json")
    if manifest.get("format") != "mrxfer-model":
        raise BadHeaderError("not a model container")
    named = load_tensors(path / "weights.mrx", manifest["tensors"])
    subnets = []
    for entry in manifest["subnets"]:
        layers = []
        for ldesc in entry["layers"]:
            layers.append(
                ConvLayer(
                    weights=named[ldesc["weights"]],
                    bias=named[ldesc["bias"]],
                    activation=ldesc["activation"],
                )
            )
        subnets.append(Subnetwork(layers=layers))
    kernel = None
    if "kernel" in manifest:
        kdesc = manifest["kernel"]
        kernel = SpiritKernel(
            coils=kdesc["coils"],
            width=kdesc["width"],
            weights=named[kdesc["tensor"]],
            tikhonov=kdesc["tikhonov"],
        )
    lam = manifest["lambda_dc"]
    lam = np.inf if lam == "inf" else float(lam)
    return CascadeModel(
        subnets=subnets,
        mode=manifest["mode"],
        lambda_dc=lam,
        coils=manifest.get("coils"),
        kernel=kernel,
        kernel_id=manifest.get("kernel_id"),
        hidden_channels=manifest.get("hidden_channels", 64),
        seed=manifest.get("seed", 0),
    )


# ---------------------------------------------------------------------------
# mask bank container


def save_mask_bank(path, bank):
    """u8 tensor (count, H, W) plus a JSON sidecar with generation metadata."""
    path = Path(path)
    stacked = np.stack([m.pattern for m in bank.masks]).astype(np.uint8)
    save_tensor(path, stacked)
    sidecar = {
        "role": bank.role,
        "masks": [
            {
                "accel": m.accel,
                "calib_size": m.calib_size,
                "seed": m.seed,
                "radius_scale": m.radius_scale,
                "alpha": m.alpha,
                "fraction": m.fraction,
            }
            for m in bank.masks
        ],
    }
    _write_json(path.with_suffix(path.suffix + ".json"), sidecar)


def load_mask_bank(path):
    path = Path(path)
    stacked = load_tensor(path)
    if stacked.ndim != 3:
        raise BadHeaderError(f"mask bank tensor must be 3D, got {stacked.shape}")
    sidecar_path = path.with_suffix(path.suffix + ".json")
    metas = None
    role = "train"
    if sidecar_path.exists():
        sidecar = _read_json(sidecar_path)
        metas = sidecar.get("masks")
        role = sidecar.get("role", "train")
    masks = []
    for i in range(stacked.shape[0]):
        pattern = stacked[i].astype(bool)
        meta = metas[i] if metas else {}
        accel = meta.get("accel")
        if accel is None:
            frac = max(pattern.mean(), 1e-9)
            accel = 1.0 / frac
        masks.append(
            SamplingMask(
                pattern=pattern,
                accel=accel,
                calib_size=meta.get("calib_size", 0),
                seed=meta.get("seed", i),
                radius_scale=meta.get("radius_scale", 0.0),
                alpha=meta.get("alpha", 2.0),
            )
        )
    return MaskBank(masks=masks, role=role)


# ---------------------------------------------------------------------------
# dataset container


def save_dataset(path, dataset, image_dtype="<c8"):
    """Dataset directory: manifest.json plus items.mrx (+ maps when multi-coil).

    Image payloads default to single precision; real single-coil items are
    stored as f32.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = {}
    items = []
    for i, img in enumerate(dataset.images):
        name = f"item{i:05d}"
        if np.iscomplexobj(img):
            named[name] = np.asarray(img, dtype=image_dtype)
        else:
            named[name] = np.asarray(img, dtype="<f4" if image_dtype == "<c8" else "<f8")
        items.append(
            {
                "name": name,
                "seed": dataset.spec.seed_start + i,
                "coil_map_id": dataset.coil_map_ids[i],
            }
        )
    manifest = {
        "format": "mrxfer-dataset",
        "version": 1,
        "kind": dataset.spec.kind,
        "height": dataset.spec.height,
        "width": dataset.spec.width,
        "count": dataset.spec.count,
        "seed_start": dataset.spec.seed_start,
        "coils": dataset.spec.coils,
        "maps_pool": dataset.spec.maps_pool,
        "items": items,
        "tensors": list(named.keys()),
        "has_maps": dataset.maps_pool is not None,
    }
    if dataset.maps_pool is not None:
        named["maps_pool"] = np.asarray(dataset.maps_pool, dtype="<c16")
        manifest["tensors"].append("maps_pool")
    save_tensors(path / "items.mrx", named)
    _write_json(path / "manifest.json", manifest)


def load_dataset(path):
    path = Path(path)
    manifest = _read_json(path / "manifest.json")
    if manifest.get("format") != "mrxfer-dataset":
        raise BadHeaderError("not a dataset container")
    named = load_tensors(path / "items.mrx", manifest["tensors"])
    spec = DomainSpec(
        kind=manifest["kind"],
        height=manifest["height"],
        width=manifest["width"],
        count=manifest["count"],
        seed_start=manifest["seed_start"],
        coils=manifest["coils"],
        maps_pool=manifest.get("maps_pool", 4),
    )
    images = []
    map_ids = []
    for item in manifest["items"]:
        arr = named[item["name"]]
        if np.iscomplexobj(arr):
            images.append(arr.astype(np.complex128))
        else:
            images.append(arr.astype(np.float64))
        map_ids.append(item["coil_map_id"])
    maps_pool = None
    if manifest.get("has_maps"):
        maps_pool = named["maps_pool"].astype(np.complex128)
    return Dataset(spec=spec, images=images, coil_map_ids=map_ids, maps_pool=maps_pool)
