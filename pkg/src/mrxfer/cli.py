"""Command-line interface.

Every run resolves its configuration (defaults, then an optional --config JSON
file, then explicit flags) and writes the resolved values next to its outputs
so runs are reproducible. Exit code 0 on success; failures print a one-line
diagnostic to stderr and exit nonzero.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from . import mrx
from .cascade import build_cascade_model, cascade_forward
from .cs import CsParams, nlcg_reconstruct
from .datasim import DomainSpec, build_domain, coil_combine
from .errors import InvalidArgumentError, MrxferError
from .estimators import SpiritReconstructor
from .metrics import psnr, ssim
from .sampling import generate_mask_bank, undersample, zero_filled_recon
from .spirit import calibrate_kernel, extract_calibration
from .training import TrainConfig, fine_tune, train_sequential

_DTYPES = {"c8": "<c8", "c16": "<c16", "f4": "<f4", "f8": "<f8"}


def _write_resolved(args, path):
    resolved = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")
    }
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _sidecar(out_path):
    return str(out_path) + ".config.json"


def _load_mask(path, index=0):
    bank = mrx.load_mask_bank(Path(path))
    if index >= len(bank):
        raise InvalidArgumentError(f"mask index {index} out of range ({len(bank)})")
    return bank[index]


def cmd_mask(args):
    bank = generate_mask_bank(
        args.count, args.height, args.width, args.accel, args.calib, args.seed
    )
    mrx.save_mask_bank(Path(args.out), bank)
    _write_resolved(args, _sidecar(args.out))
    fracs = [m.fraction for m in bank.masks]
    print(
        f"wrote {len(bank)} mask(s) to {args.out} "
        f"(fraction {min(fracs):.4f}..{max(fracs):.4f}, target {1 / args.accel:.4f})"
    )
    return 0


def cmd_simulate(args):
    spec = DomainSpec(
        kind=args.domain,
        height=args.size,
        width=args.size,
        count=args.count,
        seed_start=args.seed,
        coils=args.coils,
    )
    dataset = build_domain(spec)
    mrx.save_dataset(Path(args.out_dir), dataset)
    _write_resolved(args, Path(args.out_dir) / "resolved_config.json")
    print(f"wrote {len(dataset)} {args.domain} image(s) to {args.out_dir}")
    return 0


def _train_banks(args, height, width):
    return generate_mask_bank(
        args.mask_count, height, width, args.accel, args.calib, seed=args.mask_seed
    )


def cmd_train(args):
    dataset = mrx.load_dataset(Path(args.dataset))
    spec = dataset.spec
    mode = "multi-coil" if spec.coils > 1 else "single-coil"
    bank = _train_banks(args, spec.height, spec.width)
    kernel = None
    if mode == "multi-coil":
        from .numerics import fft2c
        from .datasim import apply_coils

        y_full = fft2c(
            apply_coils(dataset.images[0].astype(complex), dataset.maps_for(0))
        )
        calib = extract_calibration(y_full, min(args.kernel_calib, spec.height))
        kernel = calibrate_kernel(calib, args.kernel_width, args.tikhonov)
    model = build_cascade_model(
        mode,
        subnets=args.subnets,
        hidden_channels=args.hidden_channels,
        lambda_dc=np.inf,
        coils=spec.coils if mode == "multi-coil" else None,
        kernel=kernel,
        seed=args.seed,
    )
    config = TrainConfig(
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch=args.batch,
        epochs_per_subnet=args.epochs,
        seed=args.seed,
    )
    out = Path(args.out_model)
    val = mrx.load_dataset(Path(args.val_dataset)) if args.val_dataset else None

    def checkpoint(p, m):
        mrx.save_model(out / "checkpoints" / f"subnet{p}", m)

    history = train_sequential(
        model, dataset, bank, config, val_dataset=val, on_subnet_end=checkpoint
    )
    mrx.save_model(out, model)
    with open(out / "run_log.json", "w") as fh:
        json.dump(history, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_resolved(args, out / "resolved_config.json")
    print(f"trained {args.subnets}-stage {mode} model -> {args.out_model}")
    return 0


def cmd_finetune(args):
    model = mrx.load_model(Path(args.model))
    dataset = mrx.load_dataset(Path(args.dataset))
    bank = _train_banks(args, dataset.spec.height, dataset.spec.width)
    config = TrainConfig(
        finetune_lr=args.lr,
        finetune_epochs=args.epochs,
        batch=args.batch,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    history = fine_tune(model, dataset, bank, config, n_tune=args.n_tune)
    out = Path(args.out_model)
    mrx.save_model(out, model)
    with open(out / "run_log.json", "w") as fh:
        json.dump(history, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_resolved(args, out / "resolved_config.json")
    print(f"fine-tuned on {args.n_tune} sample(s) -> {args.out_model}")
    return 0


def cmd_reconstruct(args):
    ksp = mrx.load_tensor(Path(args.input)).astype(np.complex128)
    mask = _load_mask(args.mask, args.mask_index)
    maps = None
    if args.maps:
        maps = mrx.load_tensor(Path(args.maps)).astype(np.complex128)
    y_u = undersample(ksp, mask)

    if args.method == "zf":
        img = zero_filled_recon(y_u)
        if img.ndim == 3:
            img = coil_combine(img, maps) if maps is not None else img
    elif args.method == "cs":
        if ksp.ndim != 2:
            raise InvalidArgumentError("cs reconstruction is single-coil (2D input)")
        params = CsParams(lambda_l1=args.lambda_l1, iters=args.iters or 80)
        img = nlcg_reconstruct(y_u, mask, params)
    elif args.method == "spirit":
        rec = SpiritReconstructor(
            kernel_width=args.kernel_width,
            tikhonov=args.tikhonov,
            lambda_l1=args.lambda_l1,
            iters=args.iters,
            calib_size=args.kernel_calib,
        )
        rec.fit(y_u, mask)
        stack = rec.predict(y_u, mask)
        if maps is not None:
            img = coil_combine(stack, maps)
        else:
            img = stack
    elif args.method == "nn":
        if not args.model:
            raise InvalidArgumentError("--model is required for method nn")
        model = mrx.load_model(Path(args.model))
        img = cascade_forward(y_u, mask, model, maps=maps)
    else:
        raise InvalidArgumentError(f"unknown method {args.method}")

    mrx.save_tensor(Path(args.out), np.asarray(img).astype(_DTYPES[args.dtype]))
    _write_resolved(args, _sidecar(args.out))
    print(f"{args.method} reconstruction -> {args.out}")
    return 0


def cmd_eval(args):
    ref = mrx.load_tensor(Path(args.ref))
    test = mrx.load_tensor(Path(args.test))
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in metric_names:
        if m not in ("psnr", "ssim"):
            raise InvalidArgumentError(f"unknown metric {m!r}")
    refs = ref[None] if ref.ndim == 2 else ref
    tests = test[None] if test.ndim == 2 else test
    if refs.shape != tests.shape:
        raise InvalidArgumentError(
            f"shape mismatch: ref {ref.shape} vs test {test.shape}"
        )
    rows = []
    for i in range(refs.shape[0]):
        row = [str(i)]
        for m in metric_names:
            if m == "psnr":
                row.append(exp._fmt(psnr(np.abs(refs[i]), np.abs(tests[i]))))
            else:
                row.append(exp._fmt(ssim(np.abs(refs[i]), np.abs(tests[i]))))
        rows.append(row)
    header = ",".join(["image"] + [("psnr_db" if m == "psnr" else m) for m in metric_names])
    out = Path(args.out_csv)
    with open(out, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    _write_resolved(args, _sidecar(args.out_csv))
    print(f"metrics -> {args.out_csv}")
    return 0


def cmd_experiment(args):
    with open(args.grid_config) as fh:
        config = json.load(fh)
    summary = exp.run_experiment(config, args.out_dir)
    _write_resolved(args, Path(args.out_dir) / "cli_config.json")
    n_err = len(summary["errors"])
    print(
        f"experiment complete: {len(summary['records'])} records, "
        f"{n_err} failed cell(s) -> {args.out_dir}"
    )
    return 0 if n_err == 0 else 3


def _add_mask_flags(p):
    p.add_argument("--accel", type=float, default=4.0)
    p.add_argument("--calib", type=int, default=0)
    p.add_argument("--mask-count", type=int, default=20)
    p.add_argument("--mask-seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mrxfer",
        description="Accelerated-MRI reconstruction toolkit (synthetic desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="generate Poisson-disc undersampling masks")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--accel", type=float, required=True)
    p.add_argument("--calib", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument(
        "--domain",
        choices=["natural-like", "mr-like-t1", "mr-like-t2", "phantom"],
        required=True,
    )
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="sequentially train a cascade model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--val-dataset", default=None)
    _add_mask_flags(p)
    p.add_argument("--subnets", type=int, default=5)
    p.add_argument("--hidden-channels", type=int, default=64)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-width", type=int, default=7)
    p.add_argument("--kernel-calib", type=int, default=24)
    p.add_argument("--tikhonov", type=float, default=1e-2)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a trained model end to end")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-tune", type=int, required=True)
    _add_mask_flags(p)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--weight-decay", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("reconstruct", help="reconstruct undersampled k-space")
    p.add_argument("--method", choices=["zf", "cs", "spirit", "nn"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--mask-index", type=int, default=0)
    p.add_argument("--model", default=None)
    p.add_argument("--maps", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=list(_DTYPES), default="c8")
    p.add_argument("--lambda-l1", type=float, default=1e-3)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--kernel-width", type=int, default=7)
    p.add_argument("--kernel-calib", type=int, default=24)
    p.add_argument("--tikhonov", type=float, default=1e-2)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="PSNR/SSIM between two image files")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a train/fine-tune grid")
    p.add_argument("--grid-config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def _apply_config_file(parser, argv):
    """--config FILE supplies defaults; explicit flags still win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    argv = argv[:i] + argv[i + 2 :]
    with open(path) as fh:
        defaults = json.load(fh)
    sub_cmd = argv[0] if argv else None
    for action in parser._subparsers._group_actions:
        if sub_cmd in action.choices:
            action.choices[sub_cmd].set_defaults(
                **{k.replace("-", "_"): v for k, v in defaults.items()}
            )
    return argv


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except MrxferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
