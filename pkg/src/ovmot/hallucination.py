"""Masked diffusion re-noising for reference-image hallucination.

Latent grids are float64 arrays of shape ``(height, width, channels)``;
foreground masks are ``(height, width)`` arrays in ``[0, 1]``.

Step indices count down while denoising: level ``K`` is the starting noise
level and level ``0`` is the clean grid. ``deltas[k - 1]`` is the per-step
forward variance of step ``k``.
"""
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from .core import Annotation, BoundingBox


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    deltas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.array(self.deltas, dtype=np.float64).ravel()
        if d.size == 0:
            raise ValueError("a noise schedule needs at least one step")
        if not np.all((d > 0.0) & (d < 1.0)):
            raise ValueError("every step variance must lie strictly inside (0, 1)")
        d.flags.writeable = False
        a = 1.0 - d
        ab = np.cumprod(a)
        a.flags.writeable = False
        ab.flags.writeable = False
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "alpha_bars", ab)

    @classmethod
    def linear(cls, delta0=0.75, steps=50):
        """Step variances rising linearly, ``delta_k = delta0 * k / steps``."""
        if steps < 1:
            raise ValueError("steps must be at least 1")
        return cls(delta0 * np.arange(1, steps + 1) / steps)

    @property
    def steps(self):
        return self.deltas.shape[0]

    def delta(self, k):
        self._check(k, low=1)
        return float(self.deltas[k - 1])

    def alpha_bar(self, k):
        """Cumulative signal fraction after ``k`` forward steps (1 at ``k = 0``)."""
        self._check(k, low=0)
        return 1.0 if k == 0 else float(self.alpha_bars[k - 1])

    def posterior(self, k):
        """Coefficients ``(c_x0, c_xk, variance)`` of q(x_{k-1} | x_k, x_0)."""
        self._check(k, low=1)
        ab_k = self.alpha_bar(k)
        ab_prev = self.alpha_bar(k - 1)
        d_k = self.delta(k)
        c0 = np.sqrt(ab_prev) * d_k / (1.0 - ab_k)
        ck = np.sqrt(1.0 - d_k) * (1.0 - ab_prev) / (1.0 - ab_k)
        var = (1.0 - ab_prev) / (1.0 - ab_k) * d_k
        return float(c0), float(ck), float(var)

    def _check(self, k, low):
        if not low <= k <= self.steps:
            raise IndexError(f"step {k} outside [{low}, {self.steps}]")


@dataclass(frozen=True)
class HallucConfig:
    delta0: float = 0.75
    steps: int = 50
    eta: float = 0.02
    min_area: float = 64.0**2
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if not 0.0 < self.eta < self.delta0 < 1.0:
            raise ValueError("need 0 < eta < delta0 < 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    def schedule(self):
        return NoiseSchedule.linear(self.delta0, self.steps)


@dataclass
class DenoiserOutput:
    mean: np.ndarray
    stdev: float = 0.0


class Denoiser(Protocol):
    def __call__(self, x, k, schedule, cond=None) -> DenoiserOutput: ...


def forward_noise_step(x, k, schedule, rng):
    """Sample ``N(sqrt(1 - delta_k) x, delta_k I)``."""
    d = schedule.delta(k)
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(1.0 - d) * x + np.sqrt(d) * rng.standard_normal(x.shape)


def forward_noise_to(x0, k, schedule, rng):
    """Closed-form ``k``-step forward sample ``N(sqrt(ab_k) x0, (1 - ab_k) I)``."""
    ab = schedule.alpha_bar(k)
    x0 = np.asarray(x0, dtype=np.float64)
    if k == 0:
        return x0.copy()
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)


class ToyDenoiser:
    """Exact forward-process posterior given that the clean grid is ``target``.

    Stands in for a learned reverse model; the conditioning token is accepted
    and ignored.
    """

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, x, k, schedule, cond=None):
        c0, ck, var = schedule.posterior(k)
        return DenoiserOutput(c0 * self.target + ck * np.asarray(x, dtype=np.float64), float(np.sqrt(var)))


def toy_denoiser(target):
    return ToyDenoiser(target)


def reverse_step(x, k, denoiser, schedule, rng, deterministic=False, cond=None):
    out = denoiser(x, k, schedule, cond)
    if out.mean.shape != np.shape(x):
        raise ValueError("denoiser returned a mean of the wrong shape")
    if deterministic or out.stdev == 0.0:
        return out.mean
    return out.mean + out.stdev * rng.standard_normal(out.mean.shape)


def reverse_from(x, denoiser, schedule, rng, deterministic=False, cond=None):
    """Plain (unmasked) reverse pass from level ``K`` down to 0."""
    for k in range(schedule.steps, 0, -1):
        x = reverse_step(x, k, denoiser, schedule, rng, deterministic, cond)
    return x


def _check_dims(grid, mask):
    if grid.ndim != 3:
        raise ValueError("latent grids must have shape (height, width, channels)")
    if mask.shape != grid.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match grid {grid.shape[:2]}")


def masked_denoise(ref, mask, denoiser, schedule=None, cfg=HallucConfig(), rng=None, cond=None, on_step=None):
    """Re-noise ``ref`` and denoise it while holding the masked foreground.

    The grid is first pushed to the top level of the schedule. Each reverse
    step with ``delta_k > eta`` is followed by compositing: masked pixels are
    replaced by ``ref`` forward-noised to the new level. Steps with
    ``delta_k <= eta`` run unmasked to blend the seam.

    ``on_step(k, composite, foreground, generated)`` is called after every
    masked step.
    """
    ref = np.asarray(ref, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_dims(ref, mask)
    if schedule is None:
        schedule = cfg.schedule()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    m = mask[:, :, None]
    x = forward_noise_to(ref, schedule.steps, schedule, rng)
    for k in range(schedule.steps, 0, -1):
        generated = reverse_step(x, k, denoiser, schedule, rng, cfg.deterministic, cond)
        if schedule.delta(k) > cfg.eta:
            foreground = forward_noise_to(ref, k - 1, schedule, rng)
            x = m * foreground + (1.0 - m) * generated
            if on_step is not None:
                on_step(k, x, foreground, generated)
        else:
            x = generated
    return x


def _box_of(item):
    if isinstance(item, BoundingBox):
        return item, None
    if isinstance(item, Annotation):
        return item.box, None
    box, region = item
    return box, region


def build_positive_mask(annos, height, width, min_area=64.0**2):
    """Union of object regions whose box area exceeds ``min_area``.

    Items are boxes, annotations, or ``(box, region_mask)`` pairs; a region
    mask (same size as the grid) replaces the box rectangle. A pixel belongs
    to a box when its center lies inside it.
    """
    out = np.zeros((height, width), dtype=np.float64)
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    for item in annos:
        box, region = _box_of(item)
        if not box.area > min_area:
            continue
        if region is not None:
            region = np.asarray(region)
            if region.shape != (height, width):
                raise ValueError("region mask does not match the grid size")
            out = np.maximum(out, (region > 0).astype(np.float64))
            continue
        x1, y1, x2, y2 = box.corners()
        inside_c = (cols >= x1) & (cols < x2)
        inside_r = (rows >= y1) & (rows < y2)
        out[np.ix_(inside_r, inside_c)] = 1.0
    return out


def _affine3(params):
    a = np.asarray(params, dtype=np.float64)
    if a.shape == (2, 3):
        a = np.vstack([a, [0.0, 0.0, 1.0]])
    if a.shape != (3, 3):
        raise ValueError("affine parameters must be a 2x3 or 3x3 matrix")
    return a


def rotation_affine(degrees, height, width):
    """Rotation about the grid center in ``(col, row)`` pixel-index coordinates."""
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    to = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return to @ rot @ back


def geometric_transform(ref, mask, params):
    """Warp grid and mask with the same forward affine (``(col, row)`` coordinates).

    The grid is resampled bilinearly, the mask by nearest neighbour; samples
    falling outside the source are zero.
    """
    ref = np.asarray(ref, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_dims(ref, mask)
    a = _affine3(params)
    if abs(np.linalg.det(a[:2, :2])) < 1e-12:
        raise ValueError("affine transform is singular")
    inv = np.linalg.inv(a)
    h, w = mask.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    src_c = inv[0, 0] * cols + inv[0, 1] * rows + inv[0, 2]
    src_r = inv[1, 0] * cols + inv[1, 1] * rows + inv[1, 2]
    # snap round-off so integer-preserving maps resample exactly
    for arr in (src_c, src_r):
        near = np.round(arr)
        snap = np.abs(arr - near) < 1e-9
        arr[snap] = near[snap]
    coords = np.stack([src_r, src_c])
    out = np.empty_like(ref)
    for ch in range(ref.shape[2]):
        out[:, :, ch] = ndimage.map_coordinates(ref[:, :, ch], coords, order=1, mode="constant", cval=0.0)
    out_mask = ndimage.map_coordinates(mask, coords, order=0, mode="constant", cval=0.0)
    return out, out_mask
