"""Synthetic data generation: phantoms, random sinusoidal phase, analytic coil maps.

Stands in for real image corpora at desk scale. "mr-like-t1" and "mr-like-t2"
share ellipse geometry per seed and differ only in the tissue intensity
palette, so contrast transfer between the two domains is observable.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintError, InvalidArgumentError
from .validation import as_real_image, check_same_shape

KINDS = ("natural-like", "mr-like-t1", "mr-like-t2", "phantom")

# Tissue palettes: index -> magnitude. Same geometry, inverted contrasts.
_PALETTES = {
    "mr-like-t1": (0.95, 0.78, 0.58, 0.14, 0.34, 0.88),
    "mr-like-t2": (0.25, 0.38, 0.55, 0.96, 0.80, 0.18),
}

# Modified Shepp-Logan ellipse set: (intensity delta, a, b, x0, y0, angle_deg)
_SHEPP_LOGAN = (
    (1.00, 0.6900, 0.9200, 0.000, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.000, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.220, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.220, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.000, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.000, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.000, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.080, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.000, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.060, -0.6050, 0.0),
)


def _ellipse_mask(h, w, x0, y0, a, b, angle_deg):
    """Boolean inside-test on the [-1, 1]^2 unit square mapped to the grid."""
    yy, xx = np.mgrid[0:h, 0:w]
    x = (2 * xx - (w - 1)) / (w - 1)
    y = (2 * yy - (h - 1)) / (h - 1)
    th = math.radians(angle_deg)
    xr = (x - x0) * math.cos(th) + (y - y0) * math.sin(th)
    yr = -(x - x0) * math.sin(th) + (y - y0) * math.cos(th)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _shepp_logan(h, w):
    img = np.zeros((h, w))
    for dv, a, b, x0, y0, ang in _SHEPP_LOGAN:
        img[_ellipse_mask(h, w, x0, y0, a, b, ang)] += dv
    return np.clip(img, 0.0, 1.0)


def _mr_like(h, w, kind, rng):
    palette = _PALETTES[kind]
    img = np.zeros((h, w))
    # Head outline with a rim, then internal structures. Geometry comes from
    # the rng stream only, so t1/t2 with the same seed share it exactly.
    img[_ellipse_mask(h, w, 0, 0, 0.92, 0.95, 0.0)] = palette[5]
    img[_ellipse_mask(h, w, 0, 0, 0.82, 0.86, 0.0)] = palette[0]
    n_blobs = rng.integers(5, 10)
    for _ in range(n_blobs):
        x0, y0 = rng.uniform(-0.45, 0.45, size=2)
        a = rng.uniform(0.08, 0.35)
        b = rng.uniform(0.08, 0.35)
        ang = rng.uniform(0, 180)
        tissue = rng.integers(1, 5)
        img[_ellipse_mask(h, w, x0, y0, a, b, ang)] = palette[tissue]
    return np.clip(img, 0.0, 1.0)


def _natural_like(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w]
    gy, gx, g0 = rng.uniform(-0.5, 0.5, size=3)
    img = 0.5 + g0 * 0.3 + gy * (yy / h - 0.5) + gx * (xx / w - 0.5)
    n_rect = rng.integers(8, 15)
    for _ in range(n_rect):
        y0, y1 = np.sort(rng.integers(0, h, size=2))
        x0, x1 = np.sort(rng.integers(0, w, size=2))
        if y1 == y0 or x1 == x0:
            continue
        level = rng.uniform(0.0, 1.0)
        if rng.uniform() < 0.4:
            ramp = np.linspace(-0.25, 0.25, x1 - x0)[None, :]
            img[y0:y1, x0:x1] = level + ramp
        else:
            img[y0:y1, x0:x1] = level
    return np.clip(img, 0.0, 1.0)


def make_phantom(height, width, kind, seed=0):
    """Deterministic piecewise-smooth magnitude image in [0, 1]."""
    if height < 16 or width < 16:
        raise InvalidArgumentError("phantom dims must be >= 16")
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "phantom":
        img = _shepp_logan(height, width)
        # small seeded jitter keeps distinct seeds distinct
        img = np.clip(img * (1.0 + 0.02 * rng.uniform(-1, 1)), 0.0, 1.0)
    elif kind == "natural-like":
        img = _natural_like(height, width, rng)
    else:
        img = _mr_like(height, width, kind, rng)
    return img


def add_sinusoidal_phase(mag, seed=0, freqs=None, amps=None):
    """Modulate a nonnegative magnitude image with a random sinusoidal phase.

    phase(m, n) = a_x sin(w_x m) + a_y sin(w_y n), with spatial frequencies
    drawn uniformly from [-pi, pi] rad/pixel and amplitudes from [0, 1].
    ``freqs``/``amps`` override the draws (used by tests).
    """
    mag = as_real_image(mag, "magnitude", nonneg=True)
    rng = np.random.default_rng(seed)
    wx, wy = rng.uniform(-np.pi, np.pi, size=2) if freqs is None else freqs
    ax, ay = rng.uniform(0.0, 1.0, size=2) if amps is None else amps
    rows = np.arange(mag.shape[0])[:, None]
    cols = np.arange(mag.shape[1])[None, :]
    phase = ax * np.sin(wx * rows) + ay * np.sin(wy * cols)
    return mag * np.exp(1j * phase)


def analytic_coil_maps(height, width, coils, seed=0):
    """Smooth complex coil sensitivities on a ring, SOS-normalized to 1.

    Gaussian magnitude lobes centered on a ring around the FOV with a gentle
    linear phase per coil; sum over coils of |map|^2 is exactly 1 everywhere.
    """
    if coils < 1:
        raise InvalidArgumentError("coils must be >= 1")
    if coils > 64:
        raise InvalidArgumentError("coils > 64 exceeds the sanity bound")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ring = 0.55 * min(height, width)
    maps = np.empty((coils, height, width), dtype=np.complex128)
    for c in range(coils):
        theta = 2 * np.pi * c / coils + rng.uniform(0, 2 * np.pi / max(coils, 2))
        oy = cy + ring * np.sin(theta)
        ox = cx + ring * np.cos(theta)
        sigma = 0.45 * min(height, width) * (1.0 + 0.2 * rng.uniform())
        lobe = np.exp(-((yy - oy) ** 2 + (xx - ox) ** 2) / (2 * sigma**2))
        py, px = rng.uniform(-0.5, 0.5, size=2)
        ph0 = rng.uniform(0, 2 * np.pi)
        phase = 2 * np.pi * (py * yy / height + px * xx / width) + ph0
        maps[c] = lobe * np.exp(1j * phase)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / sos[None]


def apply_coils(image, maps):
    """Per-coil pixelwise sensitivity weighting; returns a (C, H, W) stack."""
    image = np.asarray(image, dtype=np.complex128)
    check_same_shape(image, maps[0], "image", "coil map")
    return maps * image[None]


def coil_combine(stack, maps):
    """Conjugate-weighted combination; exact left inverse of apply_coils."""
    stack = np.asarray(stack, dtype=np.complex128)
    check_same_shape(stack, maps, "coil stack", "coil maps")
    return np.sum(np.conj(maps) * stack, axis=0)


@dataclass
class DomainSpec:
    """One split of a synthetic domain: items come from seeds seed_start..+count-1."""

    kind: str
    height: int
    width: int
    count: int
    seed_start: int
    coils: int = 1
    maps_pool: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown kind {self.kind!r}")
        if self.count < 1:
            raise InvalidArgumentError("count must be >= 1")

    @property
    def seed_range(self):
        return (self.seed_start, self.seed_start + self.count)


@dataclass
class Dataset:
    """Fully sampled reference images plus optional coil-map pool."""

    spec: DomainSpec
    images: list
    coil_map_ids: list
    maps_pool: np.ndarray = None

    def __len__(self):
        return len(self.images)

    def maps_for(self, i):
        if self.maps_pool is None:
            return None
        return self.maps_pool[self.coil_map_ids[i]]


# offset separating coil-map seeds from image seeds
_MAPS_SEED_OFFSET = 900_000_000


def build_domain(spec):
    """Materialize a DomainSpec into a deterministic dataset.

    Single-coil items are real magnitude phantoms; multi-coil items gain a
    random sinusoidal phase and a coil-map id drawn from a small pool of
    analytic map sets.
    """
    images = []
    map_ids = []
    pool = None
    if spec.coils > 1:
        pool = np.stack(
            [
                analytic_coil_maps(
                    spec.height, spec.width, spec.coils, _MAPS_SEED_OFFSET + k
                )
                for k in range(spec.maps_pool)
            ]
        )
    for i in range(spec.count):
        seed = spec.seed_start + i
        mag = make_phantom(spec.height, spec.width, spec.kind, seed)
        if spec.coils > 1:
            img = add_sinusoidal_phase(mag, seed=seed + 1)
            map_ids.append(int(np.random.default_rng(seed + 2).integers(spec.maps_pool)))
        else:
            img = mag
            map_ids.append(None)
        images.append(img)
    return Dataset(spec=spec, images=images, coil_map_ids=map_ids, maps_pool=pool)


def check_disjoint_splits(specs):
    """Raise when any two splits overlap in seed range."""
    items = sorted(specs.items(), key=lambda kv: kv[1].seed_range)
    for (name_a, a), (name_b, b) in zip(items, items[1:]):
        if a.seed_range[1] > b.seed_range[0]:
            raise ConstraintError(
                f"seed ranges overlap between splits {name_a!r} {a.seed_range} "
                f"and {name_b!r} {b.seed_range}"
            )


def domain_splits(kind, height, width, counts, base_seed=0, coils=1, split_seeds=None):
    """Build disjoint train/val/tune/test DomainSpecs from consecutive seed ranges.

    ``counts`` maps split name -> item count. Explicit ``split_seeds`` override
    the automatic layout and are validated for disjointness.
    """
    specs = {}
    cursor = base_seed
    for name, count in counts.items():
        start = cursor if split_seeds is None else split_seeds[name]
        specs[name] = DomainSpec(
            kind=kind,
            height=height,
            width=width,
            count=count,
            seed_start=start,
            coils=coils,
        )
        cursor = start + count
    check_disjoint_splits(specs)
    return specs
