"""Differentiable emission-absorption volume rendering.

Rays are cast through a pinhole camera, clipped against the scene box,
sampled stratified (plus inverse-CDF importance resampling against the
coarse render), and integrated with the transmittance quadrature
    T_k = exp(-sum_{i<k} sigma_i * delta_i),  alpha_k = 1 - exp(-sigma_k delta_k),
    C = sum_k T_k alpha_k c_k,                A = 1 - exp(-sum_k sigma_k delta_k).
The quadrature runs on plain arrays or on tape nodes, so the same code
serves inference and training.

Field models enter through two small callables rather than a class
hierarchy: ``radiance(points4) -> (color, sigma)`` and
``velocity(points4) -> u``, each returning arrays or tape values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import Node, Tape

IMPORTANCE_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# camera


class Camera:
    """Pinhole camera: intrinsics in pixels, pose = world-from-camera.

    The camera looks along -z in its own frame, x right, y up; pixel
    (0, 0) is the top-left corner, sampled at the pixel center.
    """

    def __init__(self, fx, fy, cx, cy, pose, width, height):
        pose = np.asarray(pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 world-from-camera matrix")
        R = pose[:3, :3]
        if not (np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.fx, self.fy, self.cx, self.cy = float(fx), float(fy), float(cx), float(cy)
        self.pose = pose
        self.width, self.height = int(width), int(height)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_json(self) -> dict:
        return {"intrinsics": self.intrinsics.tolist(),
                "pose": self.pose.tolist(),
                "resolution": [self.width, self.height]}

    @classmethod
    def from_json(cls, data: dict) -> "Camera":
        K = np.asarray(data["intrinsics"], dtype=np.float64)
        w, h = data["resolution"]
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], data["pose"], w, h)

    def rays(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World-space origins and unit directions for (col, row) pixels."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        x = (pixels[:, 0] + 0.5 - self.cx) / self.fx
        y = -(pixels[:, 1] + 0.5 - self.cy) / self.fy
        d_cam = np.stack([x, y, -np.ones_like(x)], axis=1)
        d = d_cam @ self.pose[:3, :3].T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(self.pose[:3, 3], d.shape).copy()
        return o, d

    def all_pixels(self) -> np.ndarray:
        cc, rr = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([cc.ravel(), rr.ravel()], axis=1)


def look_at_camera(position, target, up=(0.0, 1.0, 0.0), fov_deg=45.0,
                   width=64, height=64) -> Camera:
    """Camera at ``position`` looking toward ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -forward  # camera looks along -z
    pose[:3, 3] = position
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(f, f, width / 2.0, height / 2.0, pose, width, height)


# ---------------------------------------------------------------------------
# ray / box intersection and sample generation


def intersect_aabb(origins, dirs, bounds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab intersection: (near, far, hit).  Misses get hit=False."""
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    if not (hi > lo).all():
        raise ValueError("empty axis-aligned box")
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # parallel rays: infinite slab bounds resolve correctly unless outside
    parallel_outside = (dirs == 0) & ((origins < lo) | (origins > hi))
    lo_t = np.fmin(t0, t1)
    hi_t = np.fmax(t0, t1)
    tmin = np.where(np.isnan(lo_t), -np.inf, lo_t)
    tmax = np.where(np.isnan(hi_t), np.inf, hi_t)
    near = np.maximum(tmin.max(axis=1), 0.0)
    far = tmax.min(axis=1)
    hit = (near < far) & ~parallel_outside.any(axis=1)
    return near, far, hit


@dataclass
class RaySampleSet:
    """Per-ray quadrature positions along o + h d.

    ``h`` is strictly increasing in [near, far]; ``delta[k] = h[k+1]-h[k]``
    with the last step the remainder up to ``far``.
    """

    origins: np.ndarray   # (R, 3)
    dirs: np.ndarray      # (R, 3) unit
    h: np.ndarray         # (R, K)
    delta: np.ndarray     # (R, K)
    far: np.ndarray       # (R,)

    def points(self) -> np.ndarray:
        """(R, K, 3) world-space sample positions."""
        return self.origins[:, None, :] + self.h[:, :, None] * self.dirs[:, None, :]


def stratified_samples(origins, dirs, near, far, count: int,
                       rng: np.random.Generator | None = None) -> RaySampleSet:
    """One jittered sample per uniform bin of [near, far].

    Without an rng the samples sit on the bin left edges, so the step
    sizes tile [near, far] exactly and the quadrature is exact for
    densities that are piecewise constant on the bins.
    """
    near = np.asarray(near, float)[:, None]
    far_col = np.asarray(far, float)[:, None]
    r = len(origins)
    edges = np.linspace(0.0, 1.0, count + 1)[None, :]
    jitter = rng.uniform(size=(r, count)) if rng is not None else np.zeros((r, count))
    frac = edges[:, :-1] + jitter * (1.0 / count)
    h = near + frac * (far_col - near)
    return RaySampleSet(origins, dirs, h, _deltas(h, np.asarray(far, float)),
                        np.asarray(far, float))


def _deltas(h: np.ndarray, far: np.ndarray) -> np.ndarray:
    d = np.diff(h, axis=1)
    tail = np.maximum(far[:, None] - h[:, -1:], 1e-12)
    return np.concatenate([d, tail], axis=1)


def hierarchical_resample(samples: RaySampleSet, weights: np.ndarray, count: int,
                          rng: np.random.Generator) -> RaySampleSet:
    """Importance-resample ``count`` extra positions from the coarse
    piecewise-constant weight PDF (plus a uniform floor per bin), then
    merge-sort with the coarse samples.

    All-zero raw weights fall back to stratified sampling of extra points.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any():
        raise ValueError("importance weights must be nonnegative")
    r, k = samples.h.shape
    near = samples.h[:, 0]
    zero_rows = weights.sum(axis=1) == 0.0

    w = weights + IMPORTANCE_FLOOR
    pdf = w / w.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((r, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0

    # stratified uniforms keep the fine samples well spread
    jitter = rng.uniform(size=(r, count))
    u = (np.arange(count)[None, :] + jitter) / count
    edges = np.concatenate([samples.h, samples.far[:, None]], axis=1)
    idx = np.clip(np.array([np.searchsorted(cdf[i], u[i], side="right")
                            for i in range(r)]) - 1, 0, k - 1)
    rows = np.arange(r)[:, None]
    c0 = cdf[rows, idx]
    c1 = cdf[rows, idx + 1]
    frac = np.where(c1 > c0, (u - c0) / np.maximum(c1 - c0, 1e-12), 0.5)
    fine = edges[rows, idx] + frac * (edges[rows, idx + 1] - edges[rows, idx])

    if zero_rows.any():
        # reuse the same uniforms, so this is exactly stratified sampling
        span = (samples.far[zero_rows] - near[zero_rows])[:, None]
        fine[zero_rows] = near[zero_rows, None] + u[zero_rows] * span

    merged = np.sort(np.concatenate([samples.h, fine], axis=1), axis=1)
    return RaySampleSet(samples.origins, samples.dirs, merged,
                        _deltas(merged, samples.far), samples.far)


# ---------------------------------------------------------------------------
# quadrature (array- or tape-valued)


@dataclass
class RenderedPixel:
    """Quadrature output for a ray batch; entries may be tape nodes."""

    color: object          # (R, 3)
    opacity: object        # (R,)
    transmittance: object  # (R, K), nonincreasing, T[:, 0] = 1
    weights: object        # (R, K) = T * alpha


def quadrature(sigma, color, delta, background=None) -> RenderedPixel:
    """Integrate per-sample density/color into pixel color and opacity.

    ``sigma``: (R, K), ``color``: tuple of three (R, K) channels or an
    (R, K, 3) array, ``delta``: (R, K) constants.  With ``background``
    the returned color is composited as C + (1 - A) B.
    """
    od = sigma * delta
    accum = ad.cumsum_exclusive(od, axis=-1)
    T = ad.exp(-accum)
    alpha = 1.0 - ad.exp(-od)
    w = T * alpha
    opacity = 1.0 - ad.exp(-asum_last(od))
    chans = _chan_split(color)
    out = [asum_last(w * c) for c in chans]
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        out = [c + (1.0 - opacity) * bg[i] for i, c in enumerate(out)]
    return RenderedPixel(_chan_join(out), opacity, T, w)


def asum_last(x):
    return ad.asum(x, axis=(x.val.ndim if isinstance(x, Node) else np.ndim(x)) - 1)


def _chan_split(color):
    if isinstance(color, (tuple, list)):
        return list(color)
    if isinstance(color, Node):
        raise ValueError("tape-mode colors must be passed as per-channel (R, K) nodes")
    return [color[..., i] for i in range(3)]


def _chan_join(chans):
    if isinstance(chans[0], Node):
        flat = [c if c.val.ndim == 1 else ad.reshape(c, (c.val.shape[0],)) for c in chans]
        return ad.concat([ad.reshape(c, (c.val.shape[0], 1)) for c in flat], axis=1)
    return np.stack([np.asarray(c) for c in chans], axis=1)


def composite_hybrid(sigma_static, color_static, sigma_fluid, color_fluid,
                     delta, background=None) -> dict:
    """Joint alpha-compositing of a static and a fluid component.

    The composed pixel uses the joint transmittance from
    sigma_static + sigma_fluid with per-model alphas
        C = sum_k T_k (alpha_s c_s + alpha_f c_f),
        A = sum_k T_k (alpha_s + alpha_f);
    each single-model render uses its own transmittance.
    """
    od_s = sigma_static * delta
    od_f = sigma_fluid * delta
    T = ad.exp(-ad.cumsum_exclusive(od_s + od_f, axis=-1))
    a_s = 1.0 - ad.exp(-od_s)
    a_f = 1.0 - ad.exp(-od_f)
    cs = _chan_split(color_static)
    cf = _chan_split(color_fluid)
    comp = [asum_last(T * (a_s * s + a_f * f)) for s, f in zip(cs, cf)]
    a_comp = asum_last(T * (a_s + a_f))
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        comp = [c + (1.0 - ad.minimum(a_comp, 1.0)) * bg[i] for i, c in enumerate(comp)]
    composed = RenderedPixel(_chan_join(comp), a_comp, T, T * (a_s + a_f))
    return {
        "composed": composed,
        "static": quadrature(sigma_static, color_static, delta, background),
        "fluid": quadrature(sigma_fluid, color_fluid, delta, background),
    }


# ---------------------------------------------------------------------------
# warped rendering


@dataclass
class WarpSpec:
    """Stochastic cross-frame warp: density is queried at positions offset
    by u * dt at time t + dt; color stays at the unwarped position/time.

    ``dt`` is in frame units, drawn per ray from N(0, 0.5), clamped to
    [-1, 1] frames and to the sequence time range; ``frame_dt`` converts
    frames to normalized time.  Positions advance by a single Euler step.
    """

    dt_frames: np.ndarray      # (R,)
    frame_dt: float            # normalized time units per frame


def draw_warp(rng: np.random.Generator, n_rays: int, t: float, frame_dt: float,
              std_frames: float = 0.5) -> WarpSpec:
    dt = rng.normal(0.0, std_frames, n_rays)
    dt = np.clip(dt, -1.0, 1.0)
    if frame_dt > 0:  # keep t + dt inside the supervised [0, 1] range
        dt = np.clip(dt, -t / frame_dt, (1.0 - t) / frame_dt)
    return WarpSpec(dt, frame_dt)


def warped_radiance(radiance_fn, velocity_fn, points4: np.ndarray,
                    warp: WarpSpec | None, samples_per_ray: int):
    """Density at warped sample positions, color at the original ones.

    ``points4``: (R*K, 4) rows of world xyz plus normalized time.  The
    field closures take such rows; ``velocity_fn`` returns world units
    per frame.  The warp offset u * dt rides the tape, so velocity
    receives gradients from image losses through the warp.
    """
    color, sigma = radiance_fn(points4)
    if warp is None or not np.any(warp.dt_frames):
        return color, sigma
    u = velocity_fn(points4)  # (R*K, 3)
    dt = np.repeat(warp.dt_frames, samples_per_ray)[:, None]
    warped_xyz = u * dt + points4[:, :3]
    t_new = points4[:, 3:4] + warp.frame_dt * dt
    warped = ad.concat([warped_xyz, t_new], axis=1) \
        if isinstance(warped_xyz, Node) else np.concatenate([warped_xyz, t_new], axis=1)
    _, sigma_w = radiance_fn(warped)
    return color, sigma_w


def _to_grid(x, shape):
    """(B,) or (B, 1) value to (R, K)."""
    return ad.reshape(x, shape)


def _render_pass(radiance_fn, velocity_fn, samples: RaySampleSet, t: float,
                 warp: WarpSpec | None, background) -> RenderedPixel:
    r, k = samples.h.shape
    pts = samples.points().reshape(-1, 3)
    pts4 = np.concatenate([pts, np.full((len(pts), 1), float(t))], axis=1)
    color, sigma = warped_radiance(radiance_fn, velocity_fn, pts4, warp, k)
    sig = _to_grid(sigma, (r, k))
    chans = tuple(_to_grid(ad.cols(color, i, i + 1), (r, k)) for i in range(3))
    return quadrature(sig, chans, samples.delta, background)


def render_rays(radiance_coarse, radiance_fine, velocity_fn, origins, dirs,
                near, far, t, k_coarse: int, k_fine: int,
                rng: np.random.Generator | None, background=None,
                warp: WarpSpec | None = None):
    """Hierarchical render of a hit-ray batch.

    Returns (coarse RenderedPixel, fine RenderedPixel, fine samples).
    The fine pass reuses the coarse warp draw; importance weights are
    detached from the tape before resampling.
    """
    coarse = stratified_samples(origins, dirs, near, far, k_coarse, rng)
    cpix = _render_pass(radiance_coarse, velocity_fn, coarse, t, warp, background)
    w = ad.value_of(cpix.weights)
    fine = hierarchical_resample(coarse, w, k_fine,
                                 rng if rng is not None else np.random.default_rng(0))
    fpix = _render_pass(radiance_fine, velocity_fn, fine, t, warp, background)
    return cpix, fpix, fine


def render_rays_hybrid(static_fn, fluid_fn, velocity_fn, origins, dirs, near, far,
                       t, k_coarse: int, k_fine: int, rng, background=None,
                       warp: WarpSpec | None = None):
    """Hierarchical render of a static+fluid pair (shared for both passes).

    Only the fluid density is warped; the static component is
    time-invariant, so cross-frame warping would only bend its geometry.
    Returns (coarse dict, fine dict) of composed/static/fluid renders.
    """

    def passes(samples):
        r, k = samples.h.shape
        pts = samples.points().reshape(-1, 3)
        pts4 = np.concatenate([pts, np.full((len(pts), 1), float(t))], axis=1)
        c_s, s_s = static_fn(pts4)
        c_f, s_f = warped_radiance(fluid_fn, velocity_fn, pts4, warp, k)
        grid = lambda x: _to_grid(x, (r, k))  # noqa: E731
        return composite_hybrid(
            grid(s_s), tuple(grid(ad.cols(c_s, i, i + 1)) for i in range(3)),
            grid(s_f), tuple(grid(ad.cols(c_f, i, i + 1)) for i in range(3)),
            samples.delta, background)

    coarse_samples = stratified_samples(origins, dirs, near, far, k_coarse, rng)
    coarse = passes(coarse_samples)
    w = ad.value_of(coarse["composed"].weights)
    fine_samples = hierarchical_resample(coarse_samples, w, k_fine,
                                         rng if rng is not None else np.random.default_rng(0))
    fine = passes(fine_samples)
    return coarse, fine


def render_warped(radiance_fn, velocity_fn, origins, dirs, near, far, t,
                  count: int, rng: np.random.Generator, frame_dt: float,
                  background=None) -> RenderedPixel:
    """Single-pass stochastic warped render (dt drawn per ray)."""
    warp = draw_warp(rng, len(np.atleast_2d(origins)), t, frame_dt)
    samples = stratified_samples(origins, dirs, near, far, count, rng)
    return _render_pass(radiance_fn, velocity_fn, samples, t, warp, background)


def render_image(camera: Camera, radiance_fn, bounds, t: float,
                 k_coarse: int = 32, k_fine: int = 32, background=(0, 0, 0),
                 radiance_fn_fine=None, chunk: int = 4096) -> np.ndarray:
    """Full-frame inference render (no tape); misses show the background.

    ``radiance_fn`` drives the importance pass; ``radiance_fn_fine``
    (default: same) is integrated on the merged samples.
    """
    fine_fn = radiance_fn_fine or radiance_fn
    pixels = camera.all_pixels()
    o, d = camera.rays(pixels)
    near, far, hit = intersect_aabb(o, d, bounds)
    img = np.tile(np.asarray(background, dtype=np.float64),
                  (camera.height * camera.width, 1))
    idx = np.nonzero(hit)[0]
    for lo in range(0, len(idx), chunk):
        sel = idx[lo:lo + chunk]
        coarse = stratified_samples(o[sel], d[sel], near[sel], far[sel], k_coarse, None)
        cpix = _render_pass(radiance_fn, None, coarse, t, None, background)
        if k_fine > 0:
            fine = hierarchical_resample(coarse, np.asarray(cpix.weights), k_fine,
                                         np.random.default_rng(0))
            out = _render_pass(fine_fn, None, fine, t, None, background)
        else:
            out = cpix
        img[sel] = out.color
    return img.reshape(camera.height, camera.width, 3)


# ---------------------------------------------------------------------------
# image I/O


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """img: (H, W, 3) float in [0, 1] or uint8."""
    data = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(data, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    """Plain-text PPM (P3)."""
    data = img if img.dtype == np.uint8 else to_uint8(img)
    h, w, _ = data.shape
    lines = [f"P3\n{w} {h}\n255\n"]
    for row in data.reshape(h, -1):
        lines.append(" ".join(str(int(v)) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def save_camera(path, camera: Camera) -> None:
    with open(path, "w") as fh:
        json.dump(camera.to_json(), fh, indent=1)


def load_camera(path) -> Camera:
    with open(path) as fh:
        return Camera.from_json(json.load(fh))
