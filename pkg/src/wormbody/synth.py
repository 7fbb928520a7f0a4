"""Procedural worm image generator with exact ground truth.

Every sample is a pure function of (seed, params, age). Appearance encodes
age through three deliberately separated channels so ablation studies have
known signal structure:

  * interior texture: banding period and contrast move with age with almost
    no nuisance noise (the strongest cue),
  * background: a haze level plus speckle density grow with age, with a
    per-sample haze jitter that caps how well background alone can predict
    age (a mid-strength cue),
  * silhouette: body length and width grow with age, but a per-identity
    size factor makes shape a deliberately weak cue.

Worm identities form longitudinal series: one base seed per identity plus
per-timepoint offsets, so pose varies while identity-linked traits persist.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import formats
from .errors import DegenerateGeometryError, InfeasibleParamsError
from .geometry import Centerline, UVField, VMode, build_uv_field, resample_arclength


@dataclass(frozen=True)
class GenParams:
    """Generator knobs. Defaults target a 256x256 canvas; use ``for_canvas``
    to rescale the pixel-denominated fields for other sizes."""

    canvas: int = 256
    age_max: float = 400.0
    # silhouette: linear growth with age, identity-level size jitter
    length_range: tuple[float, float] = (56.0, 128.0)
    halfwidth_range: tuple[float, float] = (8.0, 14.0)
    identity_size_jitter: float = 0.25
    size_scale: float = 1.0  # set per identity by the dataset builder
    # centerline random walk
    walk_steps: int = 64
    max_turn_per_step: float = 0.35
    margin: float = 4.0
    centerline_samples: int = 256
    max_retries: int = 100
    # interior texture: bands along the body axis
    texture_period_range: tuple[float, float] = (24.0, 10.0)
    texture_contrast_range: tuple[float, float] = (0.10, 0.35)
    worm_brightness: float = 0.55
    # background
    background_level: float = 0.12
    haze_gain: float = 0.00025  # intensity per hour
    haze_jitter: float = 0.016  # uniform +/- per-sample haze noise
    speckle_rate_max: float = 6.0e-4  # blobs per px^2 at age_max
    speckle_radius: tuple[float, float] = (1.5, 3.5)
    speckle_brightness: tuple[float, float] = (0.25, 0.50)
    noise_sigma: float = 0.02
    v_mode: VMode = VMode.SIDE_TO_CENTERLINE

    def __post_init__(self):
        if self.canvas < 16:
            raise ValueError("canvas too small")
        for name in ("length_range", "halfwidth_range", "texture_period_range"):
            lo_hi = getattr(self, name)
            if min(lo_hi) <= 0:
                raise ValueError(f"{name} must be positive, got {lo_hi}")
        if self.speckle_rate_max < 0 or self.haze_gain < 0:
            raise ValueError("background rates must be non-negative (monotone in age)")
        if self.age_max <= 0:
            raise ValueError("age_max must be positive")

    @classmethod
    def for_canvas(cls, canvas, **overrides):
        """Rescale all pixel-denominated defaults to a new canvas size.

        Speckle rate is rescaled to keep the expected blob count constant,
        preserving the strength of the background age cue.
        """
        s = canvas / 256.0
        scaled = dict(
            canvas=canvas,
            length_range=(56.0 * s, 128.0 * s),
            halfwidth_range=(8.0 * s, 14.0 * s),
            texture_period_range=(24.0 * s, 10.0 * s),
            margin=max(2.0, 4.0 * s),
            speckle_radius=(max(1.0, 1.5 * s), max(1.5, 3.5 * s)),
            speckle_rate_max=6.0e-4 / (s * s),
        )
        scaled.update(overrides)
        return cls(**scaled)

    def _lerp(self, lo_hi, age):
        t = np.clip(age / self.age_max, 0.0, 1.0)
        return lo_hi[0] + (lo_hi[1] - lo_hi[0]) * t

    def length(self, age):
        return self._lerp(self.length_range, age) * self.size_scale

    def halfwidth(self, age):
        return self._lerp(self.halfwidth_range, age) * self.size_scale

    def texture_period(self, age):
        return self._lerp(self.texture_period_range, age)

    def texture_contrast(self, age):
        return self._lerp(self.texture_contrast_range, age)

    def speckle_rate(self, age):
        return self.speckle_rate_max * np.clip(age / self.age_max, 0.0, 1.0)


@dataclass
class Sample:
    """One training example with exact ground truth."""

    image: np.ndarray
    mask: np.ndarray
    uv: UVField
    age_hours: float
    worm_id: int
    seed: int
    centerline: Centerline | None = None  # kept in memory, not serialized


def _wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _random_walk(rng, params, total_length):
    """Bounded-curvature heading walk, steered away from the canvas walls."""
    n = params.walk_steps
    step = total_length / (n - 1)
    hw = params.halfwidth_range[1] * params.size_scale
    safe = hw + params.margin
    lo, hi = safe, params.canvas - 1.0 - safe
    if hi <= lo:
        raise InfeasibleParamsError(
            f"worm half-width {hw:.1f} plus margin does not fit canvas {params.canvas}"
        )
    center = (params.canvas - 1.0) / 2.0
    pos = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi)])
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pts = [pos.copy()]
    for _ in range(n - 1):
        turn = rng.uniform(-params.max_turn_per_step, params.max_turn_per_step)
        # steer toward the canvas center when close to a wall
        wall_dist = min(pos[0] - lo, hi - pos[0], pos[1] - lo, hi - pos[1])
        if wall_dist < 4.0 * safe:
            to_center = math.atan2(center - pos[0], center - pos[1])
            strength = 1.0 - wall_dist / (4.0 * safe)
            turn += _wrap_angle(to_center - heading) * 0.5 * strength
        heading += float(np.clip(turn, -params.max_turn_per_step, params.max_turn_per_step))
        pos = pos + step * np.array([math.sin(heading), math.cos(heading)])
        pts.append(pos.copy())
    return np.array(pts), step


def _walk_is_feasible(pts, step, params):
    hw = params.halfwidth_range[1] * params.size_scale
    safe = hw + params.margin
    lo, hi = safe, params.canvas - 1.0 - safe
    if pts.min() < lo or pts.max() > hi:
        return False
    # self-intersection of the tube: any two points far apart along the arc
    # must stay at least a body width apart in the plane
    min_sep = max(2, int(math.ceil(3.0 * hw / step)))
    for i in range(len(pts)):
        d = np.linalg.norm(pts[i + min_sep :] - pts[i], axis=1)
        if d.size and d.min() < 2.0 * hw + 1.0:
            return False
    return True


def sample_centerline(seed, params, age):
    """Smooth random centerline of arc length ``params.length(age)``.

    Rejection-samples up to ``params.max_retries`` walks whose surrounding
    tube stays inside the canvas without self-intersecting.
    """
    rng = np.random.default_rng(seed)
    total_length = params.length(age)
    for _ in range(params.max_retries):
        pts, step = _random_walk(rng, params, total_length)
        if _walk_is_feasible(pts, step, params):
            return resample_arclength(pts, params.centerline_samples)
    raise InfeasibleParamsError(
        f"no feasible centerline after {params.max_retries} tries "
        f"(length {total_length:.1f} on canvas {params.canvas})"
    )


def _halfwidth_profile(u, total_length, h_max):
    """Tube half-width along the body: h_max * sin(pi u / L)^0.5."""
    phase = np.clip(u / max(total_length, 1e-9), 0.0, 1.0)
    return h_max * np.sqrt(np.sin(math.pi * phase))


def _rasterize_tube(cl, h_max, canvas):
    """Mask of pixels within the local half-width of the centerline."""
    pts = cl.points
    r0 = max(0, int(np.floor(pts[:, 0].min() - h_max - 1)))
    r1 = min(canvas - 1, int(np.ceil(pts[:, 0].max() + h_max + 1)))
    c0 = max(0, int(np.floor(pts[:, 1].min() - h_max - 1)))
    c1 = min(canvas - 1, int(np.ceil(pts[:, 1].max() + h_max + 1)))
    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    h_of_u = _halfwidth_profile(cl.cum_arclen, cl.total_length, h_max)
    inside = np.zeros(len(coords), dtype=bool)
    best = np.full(len(coords), np.inf)
    chunk = 8192
    for start in range(0, len(coords), chunk):
        block = coords[start : start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        dmin = np.sqrt(d2[np.arange(len(block)), idx])
        inside[start : start + chunk] = dmin <= h_of_u[idx]
        best[start : start + chunk] = dmin
    mask = np.zeros((canvas, canvas), dtype=np.uint8)
    mask[rr.ravel()[inside], cc.ravel()[inside]] = 1
    return mask


def render_worm(cl, age, params, seed):
    """Render one sample: banded worm on a hazy, speckled background."""
    rng = np.random.default_rng(seed)
    canvas = params.canvas
    h_max = params.halfwidth(age)
    mask = _rasterize_tube(cl, h_max, canvas)
    if not mask.any():
        raise DegenerateGeometryError("rendered tube is empty")
    uv = build_uv_field(mask, cl, params.v_mode)

    # background: base + age haze (jittered) + speckle blobs, worm on top
    haze = params.haze_gain * age + rng.uniform(-params.haze_jitter, params.haze_jitter)
    image = np.full((canvas, canvas), params.background_level + haze, dtype=np.float64)
    n_speckles = rng.poisson(params.speckle_rate(age) * canvas * canvas)
    for _ in range(n_speckles):
        br = rng.uniform(*params.speckle_brightness)
        radius = rng.uniform(*params.speckle_radius)
        pr, pc = rng.uniform(0, canvas - 1, size=2)
        r0, r1 = int(max(0, pr - radius - 1)), int(min(canvas - 1, pr + radius + 1))
        c0, c1 = int(max(0, pc - radius - 1)), int(min(canvas - 1, pc + radius + 1))
        rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        d2 = (rr - pr) ** 2 + (cc - pc) ** 2
        image[rr, cc] += br * np.maximum(0.0, 1.0 - d2 / (radius * radius))

    # worm interior: brightness bands along the body axis
    period = params.texture_period(age)
    contrast = params.texture_contrast(age)
    band_phase = rng.uniform(0.0, 2.0 * math.pi)
    fg = mask.astype(bool)
    bands = params.worm_brightness + contrast * np.sin(
        2.0 * math.pi * uv.u[fg] / period + band_phase
    )
    image[fg] = bands

    image += rng.normal(0.0, params.noise_sigma, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return Sample(
        image=image,
        mask=mask,
        uv=uv,
        age_hours=float(age),
        worm_id=-1,
        seed=int(seed),
        centerline=cl,
    )


def identity_traits(base_seed, worm_id, params):
    """Identity-linked nuisance traits, stable across a worm's timepoints."""
    rng = np.random.default_rng(np.random.SeedSequence([base_seed, worm_id]))
    j = params.identity_size_jitter
    size = 1.0 + rng.uniform(-j, j)
    age_offset = rng.uniform(-0.45, 0.45) * params.age_max / 10.0
    return size, age_offset


def make_sample(base_seed, worm_id, timepoint, n_timepoints, params):
    """Generate the sample for one (identity, timepoint) pair."""
    size, age_offset = identity_traits(base_seed, worm_id, params)
    age = (timepoint + 0.5) / n_timepoints * params.age_max + age_offset
    age = float(np.clip(age, 0.0, params.age_max))
    wparams = replace(params, size_scale=size)
    seed_pair = np.random.SeedSequence([base_seed, worm_id, timepoint]).generate_state(2)
    cl = sample_centerline(int(seed_pair[0]), wparams, age)
    sample = render_worm(cl, age, wparams, int(seed_pair[1]))
    sample.worm_id = worm_id
    sample.seed = int(seed_pair[0])
    return sample


def generate_samples(n_worms, n_timepoints, base_seed, params):
    return [
        make_sample(base_seed, w, t, n_timepoints, params)
        for w in range(n_worms)
        for t in range(n_timepoints)
    ]


def split_by_identity(samples, train_fraction, seed):
    """Partition samples by worm identity; no identity straddles the split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ids = sorted({s.worm_id for s in samples})
    if len(ids) < 2:
        raise ValueError(f"need at least 2 worm identities to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = set(order[:n_train])
    train = [s for s in samples if s.worm_id in train_ids]
    val = [s for s in samples if s.worm_id not in train_ids]
    return train, val


# ---------------------------------------------------------------------------
# dataset on disk
# ---------------------------------------------------------------------------

def sample_paths(root, worm_id, timepoint):
    d = os.path.join(root, f"worm_{worm_id:04d}")
    stem = os.path.join(d, f"t{timepoint:03d}")
    return {
        "dir": d,
        "image": stem + "_image.pgm",
        "mask": stem + "_mask.pgm",
        "u": stem + "_u.cguv",
        "v": stem + "_v.cguv",
        "meta": stem + "_meta.txt",
    }


def write_sample(root, timepoint, sample):
    paths = sample_paths(root, sample.worm_id, timepoint)
    os.makedirs(paths["dir"], exist_ok=True)
    formats.write_pgm(paths["image"], sample.image)
    formats.write_mask_pgm(paths["mask"], sample.mask)
    formats.write_uv_raster(paths["u"], sample.uv.u)
    formats.write_uv_raster(paths["v"], sample.uv.v)
    formats.write_kv(
        paths["meta"],
        {
            "age_hours": repr(sample.age_hours),
            "seed": sample.seed,
            "worm_id": sample.worm_id,
            "timepoint": timepoint,
            "v_mode": sample.uv.representation.value,
        },
    )


def read_sample(root, worm_id, timepoint):
    paths = sample_paths(root, worm_id, timepoint)
    image, _ = formats.read_pgm(paths["image"])
    mask = formats.read_mask_pgm(paths["mask"])
    u = formats.read_uv_raster(paths["u"]).astype(np.float64)
    v = formats.read_uv_raster(paths["v"]).astype(np.float64)
    meta = formats.read_kv(paths["meta"])
    uv = UVField(u=u, v=v, valid=mask, representation=VMode(meta["v_mode"]))
    return Sample(
        image=image,
        mask=mask,
        uv=uv,
        age_hours=float(meta["age_hours"]),
        worm_id=int(meta["worm_id"]),
        seed=int(meta["seed"]),
    )


def write_dataset(root, n_worms, n_timepoints, base_seed, params, train_fraction):
    """Generate and persist a dataset plus its identity-split manifest."""
    os.makedirs(root, exist_ok=True)
    samples = generate_samples(n_worms, n_timepoints, base_seed, params)
    for i, sample in enumerate(samples):
        write_sample(root, i % n_timepoints, sample)
    train, val = split_by_identity(samples, train_fraction, base_seed)
    train_ids = sorted({s.worm_id for s in train})
    val_ids = sorted({s.worm_id for s in val})
    manifest = {
        "n_worms": n_worms,
        "n_timepoints": n_timepoints,
        "seed": base_seed,
        "canvas": params.canvas,
        "train_ids": ",".join(str(i) for i in train_ids),
        "val_ids": ",".join(str(i) for i in val_ids),
    }
    formats.write_kv(os.path.join(root, "manifest.txt"), manifest)
    return manifest


def read_manifest(root):
    manifest = formats.read_kv(os.path.join(root, "manifest.txt"))
    manifest["train_ids"] = [int(x) for x in manifest["train_ids"].split(",") if x]
    manifest["val_ids"] = [int(x) for x in manifest["val_ids"].split(",") if x]
    return manifest


def load_split(root, split):
    """Load all samples of one side of the identity split."""
    manifest = read_manifest(root)
    if split not in ("train", "val"):
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    ids = manifest[f"{split}_ids"]
    n_t = int(manifest["n_timepoints"])
    return [read_sample(root, w, t) for w in ids for t in range(n_t)]
