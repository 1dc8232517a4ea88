"""Experiment harness: the training-size vs fine-tuning-size grid.

Runs the train-then-fine-tune workflow over a JSON-configured grid, evaluates
on the target domain's test split, and writes deterministic CSV outputs
(per-image rows plus agg=1 mean/std rows) and per-grid convergence summaries.
Independent cells may run in parallel processes when MRXFER_THREADS > 1; each
cell is internally deterministic, so outputs do not depend on the thread cap.
"""

import copy
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .cascade import build_cascade_model
from .datasim import Dataset, DomainSpec, build_domain, check_disjoint_splits
from .errors import InvalidArgumentError
from .metrics import MetricsRecord, convergence_samples
from .sampling import generate_mask_bank
from .training import TrainConfig, evaluate_model, fine_tune, train_sequential

CSV_HEADER = (
    "agg,method,accel,n_train,n_tune,seed,image_id,"
    "psnr_db,ssim,psnr_std,ssim_std,error"
)

_DEFAULT_TRAIN = {
    "subnets": 3,
    "hidden_channels": 16,
    "hidden_layers": 3,
    "epochs_per_subnet": 6,
    "batch": 8,
    "lr": 1e-3,
    "weight_decay": 1e-6,
    "finetune_lr": 3e-4,
    "finetune_epochs": 10,
}

_DEFAULT_MASKS = {
    "train_count": 20,
    "test_count": 20,
    "train_seed": 0,
    "test_seed": 10_000,
}

# seed-range offsets separating the per-replicate splits
_SEED_STRIDE = 1_000_000
_B_TUNE_OFF = 500_000
_B_TEST_OFF = 600_000
_B_TRAIN_OFF = 700_000


def resolve_config(config):
    """Fill defaults and validate a grid config dict."""
    cfg = dict(config)
    cfg.setdefault("train_domain", "natural-like")
    cfg.setdefault("test_domain", "mr-like-t1")
    cfg.setdefault("size", 64)
    cfg.setdefault("coils", 1)
    cfg.setdefault("accel", 4)
    cfg.setdefault("calib", 8)
    cfg.setdefault("n_train", [64])
    cfg.setdefault("n_tune", [0])
    cfg.setdefault("seeds", [0])
    cfg.setdefault("n_test", 16)
    cfg.setdefault("n_tune_pool", max(cfg["n_tune"]) if max(cfg["n_tune"]) else 1)
    cfg.setdefault("plots", False)
    cfg["masks"] = {**_DEFAULT_MASKS, **cfg.get("masks", {})}
    cfg["train"] = {**_DEFAULT_TRAIN, **cfg.get("train", {})}
    ref = cfg.get("reference", None)
    if ref:
        ref = dict(ref) if isinstance(ref, dict) else {}
        ref.setdefault("n_train", max(cfg["n_train"]))
        cfg["reference"] = ref
    else:
        cfg["reference"] = None
    if max(cfg["n_tune"]) > cfg["n_tune_pool"]:
        raise InvalidArgumentError("n_tune exceeds the fine-tune pool size")
    return cfg


def _domain_splits(cfg, seed):
    size = cfg["size"]
    base = seed * _SEED_STRIDE
    specs = {
        "a_train": DomainSpec(
            cfg["train_domain"], size, size, max(cfg["n_train"]), base, cfg["coils"]
        ),
        "b_tune": DomainSpec(
            cfg["test_domain"], size, size, cfg["n_tune_pool"],
            base + _B_TUNE_OFF, cfg["coils"],
        ),
        "b_test": DomainSpec(
            cfg["test_domain"], size, size, cfg["n_test"],
            base + _B_TEST_OFF, cfg["coils"],
        ),
    }
    if cfg["reference"]:
        specs["b_train"] = DomainSpec(
            cfg["test_domain"], size, size, cfg["reference"]["n_train"],
            base + _B_TRAIN_OFF, cfg["coils"],
        )
    check_disjoint_splits(specs)
    return specs


def _subset(dataset, n):
    return Dataset(
        spec=dataset.spec,
        images=dataset.images[:n],
        coil_map_ids=dataset.coil_map_ids[:n],
        maps_pool=dataset.maps_pool,
    )


def _train_config(cfg, seed):
    t = cfg["train"]
    return TrainConfig(
        lr=t["lr"],
        weight_decay=t["weight_decay"],
        batch=t["batch"],
        epochs_per_subnet=t["epochs_per_subnet"],
        finetune_lr=t["finetune_lr"],
        finetune_epochs=t["finetune_epochs"],
        seed=seed,
    )


def _banks(cfg, seed):
    size, accel, calib = cfg["size"], cfg["accel"], cfg["calib"]
    mcfg = cfg["masks"]
    train_bank = generate_mask_bank(
        mcfg["train_count"], size, size, accel, calib,
        seed=mcfg["train_seed"] + 1000 * seed, role="train",
    )
    test_bank = generate_mask_bank(
        mcfg["test_count"], size, size, accel, calib,
        seed=mcfg["test_seed"] + 1000 * seed, role="test",
    )
    return train_bank, test_bank


def _records(cfg, pairs, method, n_train, n_tune, seed):
    return [
        MetricsRecord(
            psnr_db=p, ssim=s, method=method, accel=cfg["accel"],
            n_train=n_train, n_tune=n_tune, seed=seed, image_id=f"img{i:03d}",
        )
        for i, (p, s) in enumerate(pairs)
    ]


def _run_transfer_cell(cfg, seed, n_train):
    """Train one base model on domain A, then evaluate every n_tune variant."""
    specs = _domain_splits(cfg, seed)
    train_bank, test_bank = _banks(cfg, seed)
    a_train = _subset(build_domain(specs["a_train"]), n_train)
    b_tune = build_domain(specs["b_tune"])
    b_test = build_domain(specs["b_test"])
    tcfg = _train_config(cfg, seed)
    t = cfg["train"]
    base = build_cascade_model(
        "single-coil" if cfg["coils"] == 1 else "multi-coil",
        subnets=t["subnets"],
        hidden_channels=t["hidden_channels"],
        hidden_layers=t["hidden_layers"],
        seed=seed,
    )
    train_sequential(base, a_train, train_bank, tcfg)
    records = []
    for n_tune in cfg["n_tune"]:
        model = copy.deepcopy(base)
        fine_tune(model, b_tune, train_bank, tcfg, n_tune=n_tune)
        pairs = evaluate_model(model, b_test, test_bank)
        records.extend(_records(cfg, pairs, "nn", n_train, n_tune, seed))
    return records


def _run_reference_cell(cfg, seed):
    """Train the target-domain reference model and evaluate it."""
    specs = _domain_splits(cfg, seed)
    train_bank, test_bank = _banks(cfg, seed)
    b_train = build_domain(specs["b_train"])
    b_test = build_domain(specs["b_test"])
    tcfg = _train_config(cfg, seed)
    t = cfg["train"]
    model = build_cascade_model(
        "single-coil" if cfg["coils"] == 1 else "multi-coil",
        subnets=t["subnets"],
        hidden_channels=t["hidden_channels"],
        hidden_layers=t["hidden_layers"],
        seed=seed,
    )
    train_sequential(model, b_train, train_bank, tcfg)
    pairs = evaluate_model(model, b_test, test_bank)
    n_ref = cfg["reference"]["n_train"]
    return _records(cfg, pairs, "nn-target", n_ref, 0, seed)


def _run_cell(args):
    cfg, kind, seed, n_train = args
    try:
        if kind == "reference":
            return _run_reference_cell(cfg, seed), None
        return _run_transfer_cell(cfg, seed, n_train), None
    except Exception as exc:  # error rows keep the harness going
        return [], f"{kind} seed={seed} n_train={n_train}: {exc}"


def _thread_cap():
    raw = os.environ.get("MRXFER_THREADS", "0")
    try:
        return max(int(raw), 0)
    except ValueError:
        return 0


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    return str(v)


def records_to_rows(records):
    rows = []
    for r in records:
        rows.append(
            [0, r.method, r.accel, r.n_train, r.n_tune, r.seed, r.image_id,
             r.psnr_db, r.ssim, "", "", ""]
        )
    return rows


def aggregate_rows(records):
    """One agg=1 row (mean/std over images) per grid cell."""
    cells = {}
    for r in records:
        cells.setdefault((r.method, r.accel, r.n_train, r.n_tune, r.seed), []).append(r)
    rows = []
    for (method, accel, n_train, n_tune, seed), rs in sorted(cells.items()):
        psnrs = np.array([r.psnr_db for r in rs])
        ssims = np.array([r.ssim for r in rs])
        rows.append(
            [1, method, accel, n_train, n_tune, seed, "",
             float(psnrs.mean()), float(ssims.mean()),
             float(psnrs.std()), float(ssims.std()), ""]
        )
    return rows


def write_csv(path, rows, header=CSV_HEADER):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _convergence_rows(cfg, records):
    """Per (seed, n_train) convergence summary against the reference PSNR."""
    ref_by_seed = {}
    for r in records:
        if r.method == "nn-target":
            ref_by_seed.setdefault(r.seed, []).append(r.psnr_db)
    curves = {}
    for r in records:
        if r.method == "nn":
            curves.setdefault((r.seed, r.n_train, r.n_tune), []).append(r.psnr_db)
    rows = []
    keys = sorted({(s, nt) for (s, nt, _) in curves})
    for seed, n_train in keys:
        curve = sorted(
            (n_tune, float(np.mean(v)))
            for (s, nt, n_tune), v in curves.items()
            if s == seed and nt == n_train
        )
        if len(curve) < 2 or seed not in ref_by_seed:
            continue
        ref_psnr = float(np.mean(ref_by_seed[seed]))
        n_conv, converged = convergence_samples(curve, ref_psnr)
        rows.append([cfg["accel"], seed, n_train, n_conv, int(converged), ref_psnr])
    return rows


def _write_plot(path, cfg, agg_rows):
    """Minimal deterministic SVG line chart: mean PSNR vs n_tune per n_train."""
    series = {}
    for row in agg_rows:
        if row[1] != "nn":
            continue
        series.setdefault(row[3], []).append((row[4], row[7]))
    if not series:
        return
    pts = [p for curve in series.values() for p in curve]
    x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts) or 1
    y_lo, y_hi = min(p[1] for p in pts), max(p[1] for p in pts)
    y_hi = y_hi if y_hi > y_lo else y_lo + 1
    width, height, pad = 480, 320, 40

    def sx(x):
        return pad + (width - 2 * pad) * (x - x_lo) / max(x_hi - x_lo, 1e-9)

    def sy(y):
        return height - pad - (height - 2 * pad) * (y - y_lo) / (y_hi - y_lo)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="16" text-anchor="middle" font-size="12">'
        f"mean PSNR (dB) vs fine-tuning samples, R={cfg['accel']}</text>",
    ]
    for k, (n_train, curve) in enumerate(sorted(series.items())):
        curve = sorted(curve)
        path_d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in curve)
        color = colors[k % len(colors)]
        parts.append(
            f'<polyline points="{path_d}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - pad}" y="{pad + 14 * k}" text-anchor="end" '
            f'font-size="11" fill="{color}">n_train={n_train}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def run_experiment(config, out_dir):
    """Execute the grid, write records.csv / convergence.csv / resolved_config.json.

    Returns a summary dict with the record list and aggregate rows. Failed
    cells become error rows and the harness continues.
    """
    cfg = resolve_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")

    tasks = []
    for seed in cfg["seeds"]:
        for n_train in cfg["n_train"]:
            tasks.append((cfg, "transfer", seed, n_train))
        if cfg["reference"]:
            tasks.append((cfg, "reference", seed, None))

    threads = _thread_cap()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    records = []
    error_rows = []
    for (cfg_, kind, seed, n_train), (recs, err) in zip(tasks, results):
        records.extend(recs)
        if err is not None:
            error_rows.append(
                [0, kind, cfg["accel"], n_train or "", "", seed, "", "", "", "", "", err.replace(",", ";")]
            )

    rows = records_to_rows(records)
    agg = aggregate_rows(records)
    write_csv(out_dir / "records.csv", rows + agg + error_rows)
    conv_rows = _convergence_rows(cfg, records)
    if conv_rows:
        write_csv(
            out_dir / "convergence.csv",
            conv_rows,
            header="accel,seed,n_train,converged_n_tune,converged,ref_psnr_db",
        )
    if cfg["plots"]:
        _write_plot(out_dir / "psnr_vs_ntune.svg", cfg, agg)
    return {"records": records, "aggregates": agg, "errors": error_rows, "config": cfg}
