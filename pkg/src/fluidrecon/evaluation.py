"""Volumetric evaluation metrics, grid sampling of trained fields, and
slice visualizations.

Velocities are expressed in world units per frame throughout, so the
frame-to-frame warp metrics advect with dt = 1 frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fields import GrowingMlp, eval_radiance, eval_velocity
from .physics import grid_curl, grid_divergence
from .scenes import Domain, GridField, advect_semi_lagrangian


# ---------------------------------------------------------------------------
# grid sampling


def sample_to_grid(fn, dims, bounds, t: float) -> GridField:
    """Cell-center sampling of a continuous field closure.

    ``fn`` maps (B, 4) rows of world xyz + normalized time to (B,) or
    (B, 3) values; deterministic by construction.
    """
    shell = GridField(np.zeros(tuple(dims)), bounds)
    pts = shell.cell_centers().reshape(-1, 3)
    pts4 = np.concatenate([pts, np.full((len(pts), 1), float(t))], axis=1)
    vals = np.asarray(fn(pts4))
    if vals.ndim == 2 and vals.shape[1] == 3:
        data = vals.reshape(*dims, 3)
    else:
        data = vals.reshape(tuple(dims))
    out = GridField(data, bounds, time=float(t))
    return out


def density_grid(model: GrowingMlp, domain: Domain, dims, t: float) -> GridField:
    def fn(pts4):
        unit = np.concatenate([domain.to_unit(pts4[:, :3]), pts4[:, 3:4]], axis=1)
        if model.in_dim == 3:
            unit = unit[:, :3]
        return eval_radiance(model, unit).sigma

    return sample_to_grid(fn, dims, domain.bounds, t)


def velocity_grid(model: GrowingMlp, domain: Domain, dims, t: float) -> GridField:
    def fn(pts4):
        unit = np.concatenate([domain.to_unit(pts4[:, :3]), pts4[:, 3:4]], axis=1)
        return eval_velocity(model, unit).velocity

    return sample_to_grid(fn, dims, domain.bounds, t)


# ---------------------------------------------------------------------------
# metrics


def _masked(values: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return values.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape[:3]:
        raise ValueError("mask dims do not match the grid")
    return values[mask].ravel()


def l2_volume(a: GridField, b: GridField, mask=None, reduce: str = "mean") -> float:
    """Squared error between two grids over unmasked cells."""
    if a.dims != b.dims or a.channels != b.channels:
        raise ValueError("grid dims/channels mismatch")
    d = (a.data - b.data) ** 2
    if a.channels == 3:
        d = d.sum(axis=-1)
    vals = _masked(d, mask)
    return float(vals.sum() if reduce == "sum" else vals.mean())


def mean_abs_divergence(vel: GridField, mask=None, reduce: str = "mean") -> float:
    d = np.abs(grid_divergence(vel))
    vals = _masked(d, mask)
    return float(vals.sum() if reduce == "sum" else vals.mean())


def warp_error(sigma_t: GridField, vel_t: GridField, sigma_next: GridField,
               mask=None, reduce: str = "mean") -> float:
    """|| Adv(sigma_t, u_t) - sigma_{t+1} ||^2 over unmasked cells."""
    if sigma_t.dims != vel_t.dims or sigma_t.dims != sigma_next.dims:
        raise ValueError("grid dims mismatch")
    warped = advect_semi_lagrangian(sigma_t, vel_t, dt=1.0)
    d = (warped.data - sigma_next.data) ** 2
    vals = _masked(d, mask)
    return float(vals.sum() if reduce == "sum" else vals.mean())


def midwarp_error(sigma_t: GridField, vel_t: GridField, sigma_next: GridField,
                  vel_next: GridField, mask=None, reduce: str = "mean") -> float:
    """Both frames advected to the midpoint time, forward and backward:
    || Adv(sigma_{t+1}, -0.5 u_{t+1}) - Adv(sigma_t, 0.5 u_t) ||^2."""
    if sigma_t.dims != sigma_next.dims or vel_t.dims != vel_next.dims:
        raise ValueError("grid dims mismatch")
    fwd = advect_semi_lagrangian(sigma_t, _scaled(vel_t, 0.5), dt=1.0)
    back = advect_semi_lagrangian(sigma_next, _scaled(vel_next, -0.5), dt=1.0)
    d = (back.data - fwd.data) ** 2
    vals = _masked(d, mask)
    return float(vals.sum() if reduce == "sum" else vals.mean())


def _scaled(vel: GridField, s: float) -> GridField:
    return GridField(vel.data * s, vel.bounds, vel.frame_dt, vel.time)


def velocity_cosine(pred: GridField, ref: GridField, mask=None) -> float:
    """Mean cosine similarity between vector grids over unmasked cells."""
    if pred.dims != ref.dims:
        raise ValueError("grid dims mismatch")
    a = pred.data.reshape(-1, 3)
    b = ref.data.reshape(-1, 3)
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        a, b = a[m], b[m]
    num = np.sum(a * b, axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12
    return float(np.mean(num / den))


def psnr(img: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(img) - np.asarray(ref)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def density_iou(a_mask: np.ndarray, b_mask: np.ndarray) -> float:
    a = np.asarray(a_mask, dtype=bool)
    b = np.asarray(b_mask, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


# ---------------------------------------------------------------------------
# report


@dataclass
class FrameMetrics:
    t: float
    l2_sigma: float
    l2_u: float
    div: float
    warp: float
    midwarp: float


@dataclass
class MetricsReport:
    frames: list = field(default_factory=list)

    def add(self, fm: FrameMetrics) -> None:
        self.frames.append(fm)

    def means(self) -> dict:
        if not self.frames:
            return {}
        keys = ("l2_sigma", "l2_u", "div", "warp", "midwarp")
        out = {}
        for k in keys:
            vals = [getattr(f, k) for f in self.frames if np.isfinite(getattr(f, k))]
            out[k] = float(np.mean(vals)) if vals else float("nan")
        return out

    def to_json(self) -> dict:
        return {"frames": [vars(f).copy() for f in self.frames],
                "means": self.means()}

    @classmethod
    def from_json(cls, data: dict) -> "MetricsReport":
        rep = cls()
        for row in data["frames"]:
            rep.add(FrameMetrics(**row))
        return rep

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    def save_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "l2_sigma", "l2_u", "div", "warp", "midwarp"])
            for f in self.frames:
                w.writerow([f.t, f.l2_sigma, f.l2_u, f.div, f.warp, f.midwarp])


def evaluate_fields(dataset, density_model: GrowingMlp, velocity_model: GrowingMlp,
                    dims=None, mask_fn=None) -> MetricsReport:
    """Per-frame volumetric metrics of trained fields against the
    dataset's ground truth grids.

    ``mask_fn(sigma_gt: GridField) -> bool array`` selects the evaluation
    region (e.g. to exclude an inflow band); default: everything.
    """
    if not dataset.gt_sigma:
        raise ValueError("dataset has no ground-truth grids")
    domain = dataset.domain()
    dims = tuple(dims) if dims is not None else dataset.gt_sigma[0].dims
    report = MetricsReport()
    n = dataset.n_frames
    sig_grids, vel_grids = [], []
    for k in range(n):
        t = domain.time_of_frame(k)
        sig_grids.append(density_grid(density_model, domain, dims, t))
        vel_grids.append(velocity_grid(velocity_model, domain, dims, t))
    for k in range(n):
        gt_sig = dataset.gt_sigma[k]
        gt_vel = dataset.gt_velocity[k] if dataset.gt_velocity else None
        if gt_sig.dims != dims:
            from .scenes import downsample_to
            gt_sig = downsample_to(gt_sig, dims)
            gt_vel = downsample_to(gt_vel, dims) if gt_vel is not None else None
        mask = mask_fn(gt_sig) if mask_fn else None
        l2s = l2_volume(sig_grids[k], gt_sig, mask)
        l2u = l2_volume(vel_grids[k], gt_vel, mask) if gt_vel is not None else float("nan")
        div = mean_abs_divergence(vel_grids[k], mask)
        if k + 1 < n:
            warp = warp_error(sig_grids[k], vel_grids[k], sig_grids[k + 1], mask)
            mid = midwarp_error(sig_grids[k], vel_grids[k], sig_grids[k + 1],
                                vel_grids[k + 1], mask)
        else:
            warp = mid = float("nan")
        report.add(FrameMetrics(domain.time_of_frame(k), l2s, l2u, div, warp, mid))
    return report


# ---------------------------------------------------------------------------
# slice visualizations


def _mid_slice(data: np.ndarray, axis: int) -> np.ndarray:
    idx = data.shape[axis] // 2
    return np.take(data, idx, axis=axis)


def velocity_slice_image(vel: GridField, sigma: GridField | None, axis: int = 2,
                         outside_scale: float = 0.3,
                         sigma_threshold: float = 1e-3) -> np.ndarray:
    """Mid-slice velocity color map: components map to RGB around gray;
    intensity is reduced outside the density mask."""
    sl = _mid_slice(vel.data, axis)
    scale = np.abs(sl).max() or 1.0
    img = 0.5 + 0.5 * sl / scale
    if sigma is not None:
        m = _mid_slice(sigma.data, axis) > sigma_threshold
        img = np.where(m[..., None], img, 0.5 + (img - 0.5) * outside_scale)
    return np.clip(img.transpose(1, 0, 2)[::-1], 0, 1)


def vorticity_slice_image(vel: GridField, axis: int = 2,
                          fixed_range: float | None = None) -> np.ndarray:
    """Mid-slice of one curl component on a blue-white-red diverging map
    with a symmetric range (fixed per sequence when given)."""
    curl = grid_curl(vel)
    comp = _mid_slice(curl[..., axis], axis)
    r = fixed_range if fixed_range else (np.abs(comp).max() or 1.0)
    x = np.clip(comp / r, -1.0, 1.0)
    img = np.ones((*x.shape, 3))
    neg = x < 0
    img[..., 0] = np.where(neg, 1.0 + x, 1.0)        # red fades for negative
    img[..., 1] = 1.0 - np.abs(x)
    img[..., 2] = np.where(neg, 1.0, 1.0 - x)        # blue fades for positive
    return np.clip(img.transpose(1, 0, 2)[::-1], 0, 1)


def vorticity_range(vel_frames: list[GridField], axis: int = 2) -> float:
    """Symmetric color range shared by a sequence's vorticity slices."""
    peak = 0.0
    for v in vel_frames:
        comp = _mid_slice(grid_curl(v)[..., axis], axis)
        peak = max(peak, float(np.abs(comp).max()))
    return peak or 1.0
