"""Variable-density Poisson-disc undersampling masks and retrospective undersampling.

Masks are generated by Bridson-style dart throwing on a background grid with a
radially increasing minimum-distance radius r(p) = r0 * (1 + alpha * d(p)),
where d is the normalized distance from k-space center. The global scale r0 is
found by bisection so the achieved sampling fraction matches 1/R.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConstraintError, InvalidArgumentError
from .numerics import ifft2c
from .validation import check_grid_match

DENSITY_ALPHA = 2.0
CANDIDATES_PER_POINT = 30
MIN_RADIUS = 0.35
BISECT_TOL = 0.005
FRACTION_BAND = 0.05

_U64 = np.uint64


@njit(cache=True)
def _splitmix64(z):
    z = (z + _U64(0x9E3779B97F4A7C15)) & _U64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)) & _U64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)) & _U64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> _U64(31))


@njit(cache=True)
def _xoro_next(state):
    # xoroshiro128+ step; uniform double in [0, 1)
    s0 = state[0]
    s1 = state[1]
    result = (s0 + s1) & _U64(0xFFFFFFFFFFFFFFFF)
    s1 = s1 ^ s0
    state[0] = (
        ((s0 << _U64(55)) | (s0 >> _U64(9))) ^ s1 ^ ((s1 << _U64(14)) & _U64(0xFFFFFFFFFFFFFFFF))
    ) & _U64(0xFFFFFFFFFFFFFFFF)
    state[1] = ((s1 << _U64(36)) | (s1 >> _U64(28))) & _U64(0xFFFFFFFFFFFFFFFF)
    return (result >> _U64(11)) * 1.1102230246251565e-16  # 2**-53


@njit(cache=True)
def _poisson_points(h, w, r0, alpha, n_cand, seed):
    """Bridson dart throwing with variable radius; returns accepted points (n, 2)."""
    state = np.empty(2, dtype=np.uint64)
    state[0] = _splitmix64(_U64(seed))
    state[1] = _splitmix64(state[0])

    cy = (h - 1.0) / 2.0
    cx = (w - 1.0) / 2.0
    dmax = math.sqrt(cy * cy + cx * cx)
    if dmax <= 0.0:
        dmax = 1.0
    cell = r0 / math.sqrt(2.0)
    gh = int(h / cell) + 2
    gw = int(w / cell) + 2
    grid = np.full((gh, gw), -1, dtype=np.int64)
    cap = gh * gw  # background cells hold at most one point each
    pts = np.empty((cap, 2), dtype=np.float64)
    active = np.empty(cap, dtype=np.int64)

    pts[0, 0] = cy
    pts[0, 1] = cx
    grid[int(cy / cell), int(cx / cell)] = 0
    active[0] = 0
    npts = 1
    nact = 1
    wrad = int(math.ceil((1.0 + alpha) * math.sqrt(2.0))) + 1

    while nact > 0:
        ai = int(_xoro_next(state) * nact)
        if ai >= nact:
            ai = nact - 1
        pi = active[ai]
        py = pts[pi, 0]
        px = pts[pi, 1]
        dp = math.sqrt((py - cy) ** 2 + (px - cx) ** 2) / dmax
        rp = r0 * (1.0 + alpha * dp)
        found = False
        for _ in range(n_cand):
            rad = rp * (1.0 + _xoro_next(state))
            ang = 6.283185307179586 * _xoro_next(state)
            qy = py + rad * math.sin(ang)
            qx = px + rad * math.cos(ang)
            if qy < 0.0 or qy >= h or qx < 0.0 or qx >= w:
                continue
            gy = int(qy / cell)
            gx = int(qx / cell)
            if grid[gy, gx] >= 0:
                continue
            y0 = gy - wrad
            if y0 < 0:
                y0 = 0
            y1 = gy + wrad + 1
            if y1 > gh:
                y1 = gh
            x0 = gx - wrad
            if x0 < 0:
                x0 = 0
            x1 = gx + wrad + 1
            if x1 > gw:
                x1 = gw
            ok = True
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    j = grid[yy, xx]
                    if j < 0:
                        continue
                    dy = pts[j, 0] - qy
                    dx = pts[j, 1] - qx
                    dd = dy * dy + dx * dx
                    my = (pts[j, 0] + qy) * 0.5
                    mx = (pts[j, 1] + qx) * 0.5
                    dm = math.sqrt((my - cy) ** 2 + (mx - cx) ** 2) / dmax
                    rm = r0 * (1.0 + alpha * dm)
                    if dd < rm * rm:
                        ok = False
                        break
                if not ok:
                    break
            if ok and npts < cap:
                pts[npts, 0] = qy
                pts[npts, 1] = qx
                grid[gy, gx] = npts
                active[nact] = npts
                nact += 1
                npts += 1
                found = True
        if not found:
            active[ai] = active[nact - 1]
            nact -= 1
    return pts[:npts]


@dataclass
class SamplingMask:
    """Boolean k-space sampling pattern with acceleration metadata."""

    pattern: np.ndarray
    accel: float
    calib_size: int
    seed: int
    radius_scale: float = 0.0
    alpha: float = DENSITY_ALPHA
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    @property
    def height(self):
        return self.pattern.shape[0]

    @property
    def width(self):
        return self.pattern.shape[1]

    @property
    def fraction(self):
        return float(self.pattern.mean())


@dataclass
class MaskBank:
    masks: list
    role: str = "train"

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i):
        return self.masks[i]


def _calib_slices(h, w, calib_size):
    y0 = (h - calib_size) // 2
    x0 = (w - calib_size) // 2
    return slice(y0, y0 + calib_size), slice(x0, x0 + calib_size)


def _rasterize(h, w, points, calib_size):
    mask = np.zeros((h, w), dtype=bool)
    if len(points):
        iy = np.clip(np.rint(points[:, 0]).astype(int), 0, h - 1)
        ix = np.clip(np.rint(points[:, 1]).astype(int), 0, w - 1)
        mask[iy, ix] = True
    if calib_size > 0:
        sy, sx = _calib_slices(h, w, calib_size)
        mask[sy, sx] = True
    return mask


def _mean_inverse_density(h, w, alpha):
    """Grid mean of 1/(1 + alpha*d)^2, the variable-density correction factor."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dmax = math.sqrt(cy * cy + cx * cx) or 1.0
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / dmax
    return float(np.mean(1.0 / (1.0 + alpha * d) ** 2))


def generate_mask(height, width, accel, calib_size=0, seed=0):
    """Generate a variable-density Poisson-disc mask hitting fraction 1/accel.

    Deterministic in (height, width, accel, calib_size, seed). The central
    calib_size x calib_size block is always fully sampled. Raises
    ConstraintError when the target fraction cannot be reached.
    """
    if height < 1 or width < 1:
        raise InvalidArgumentError("mask dims must be positive")
    if accel < 1:
        raise InvalidArgumentError(f"acceleration must be >= 1, got {accel}")
    if calib_size < 0 or calib_size >= min(height, width):
        if calib_size != 0:
            raise InvalidArgumentError(
                f"calib_size {calib_size} must be < min(height, width)"
            )
    if accel == 1:
        return SamplingMask(
            pattern=np.ones((height, width), dtype=bool),
            accel=1.0,
            calib_size=calib_size,
            seed=seed,
        )

    target = 1.0 / accel
    calib_fraction = (calib_size * calib_size) / (height * width)
    if target <= calib_fraction:
        raise ConstraintError(
            f"target fraction {target:.4f} not reachable: calibration block alone "
            f"covers {calib_fraction:.4f}; lower calib_size or acceleration"
        )

    def evaluate(r0):
        pts = _poisson_points(
            height, width, r0, DENSITY_ALPHA, CANDIDATES_PER_POINT, np.uint64(seed)
        )
        mask = _rasterize(height, width, pts, calib_size)
        return mask, pts, float(mask.mean())

    # Initial scale from the empirical packing fraction of the dart thrower.
    m_density = _mean_inverse_density(height, width, DENSITY_ALPHA)
    r_init = max(MIN_RADIUS, math.sqrt(0.75 * m_density / target))
    lo, hi = r_init / 1.5, r_init * 1.5

    lo = max(lo, MIN_RADIUS)
    mask_lo, pts_lo, f_lo = evaluate(lo)
    for _ in range(12):
        if f_lo >= target or lo <= MIN_RADIUS:
            break
        lo = max(MIN_RADIUS, lo / 1.5)
        mask_lo, pts_lo, f_lo = evaluate(lo)
    if f_lo < target:
        raise ConstraintError(
            f"cannot reach fraction {target:.4f}: densest achievable is {f_lo:.4f}"
        )
    hi_cap = max(height, width)
    mask_hi, pts_hi, f_hi = evaluate(hi)
    for _ in range(12):
        if f_hi <= target or hi >= hi_cap:
            break
        hi = min(hi_cap, hi * 1.5)
        mask_hi, pts_hi, f_hi = evaluate(hi)
    if f_hi > target:
        raise ConstraintError(
            f"cannot reach fraction {target:.4f}: sparsest achievable is {f_hi:.4f} "
            f"(calibration floor {calib_fraction:.4f})"
        )

    best = min(
        [(abs(f_lo - target), lo, mask_lo, pts_lo, f_lo),
         (abs(f_hi - target), hi, mask_hi, pts_hi, f_hi)],
        key=lambda t: t[0],
    )
    for _ in range(30):
        if best[0] <= BISECT_TOL * target:
            break
        mid = 0.5 * (lo + hi)
        mask_m, pts_m, f_m = evaluate(mid)
        if abs(f_m - target) < best[0]:
            best = (abs(f_m - target), mid, mask_m, pts_m, f_m)
        if f_m >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4 * hi:
            break

    _, r0, mask, pts, fraction = best
    if abs(fraction - target) > FRACTION_BAND * target:
        raise ConstraintError(
            f"achieved fraction {fraction:.4f} outside +-5% of target {target:.4f}"
        )
    return SamplingMask(
        pattern=mask,
        accel=float(accel),
        calib_size=calib_size,
        seed=seed,
        radius_scale=r0,
        alpha=DENSITY_ALPHA,
        points=pts,
    )


def generate_mask_bank(n, height, width, accel, calib_size=0, seed=0, role="train"):
    """Generate ``n`` pairwise-distinct masks from consecutive seeds.

    Seeds run seed..seed+n-1; colliding patterns are regenerated from further
    seeds, with a bounded retry budget.
    """
    if n < 1:
        raise InvalidArgumentError("bank size must be >= 1")
    masks = []
    seen = set()
    next_seed = seed
    budget = 8 * n + 16
    while len(masks) < n and budget > 0:
        m = generate_mask(height, width, accel, calib_size, next_seed)
        key = m.pattern.tobytes()
        if key not in seen:
            seen.add(key)
            masks.append(m)
        next_seed += 1
        budget -= 1
    if len(masks) < n:
        raise ConstraintError(
            f"could not generate {n} distinct masks (got {len(masks)}) "
            f"within the retry budget"
        )
    return MaskBank(masks=masks, role=role)


def undersample(ksp, mask):
    """Zero out unacquired k-space samples; exact zeros off the pattern."""
    ksp = np.asarray(ksp)
    pattern = check_grid_match(ksp, mask, "kspace")
    return np.where(pattern, ksp, 0.0)


def zero_filled_recon(ksp_u):
    """Per-coil inverse centered FFT of (undersampled) k-space."""
    return ifft2c(ksp_u)


def verify_poisson_property(mask, tol=1e-9):
    """Check the variable-density minimum-distance property on the point set.

    For every pair of accepted dart points, distance >= r(midpoint) with
    r(p) = radius_scale * (1 + alpha * d(p)). Returns True when it holds.
    """
    pts = np.asarray(mask.points)
    if len(pts) < 2:
        return True
    h, w = mask.pattern.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dmax = math.sqrt(cy * cy + cx * cx) or 1.0
    r0, alpha = mask.radius_scale, mask.alpha
    chunk = 512
    for i0 in range(0, len(pts), chunk):
        block = pts[i0 : i0 + chunk]
        dy = block[:, 0, None] - pts[None, :, 0]
        dx = block[:, 1, None] - pts[None, :, 1]
        dist = np.hypot(dy, dx)
        my = (block[:, 0, None] + pts[None, :, 0]) * 0.5
        mx = (block[:, 1, None] + pts[None, :, 1]) * 0.5
        dmid = np.hypot(my - cy, mx - cx) / dmax
        rmid = r0 * (1.0 + alpha * dmid)
        bad = dist < rmid - tol
        for k in range(len(block)):
            bad[k, i0 + k] = False
        if bad.any():
            return False
    return True
