"""Synthetic ground-truth scenes: grid fields, analytic flows, a small
smoke solver, reference rendering, and dataset export.

A dataset directory holds scene.json (cameras, timestamps, background,
domain box), frames/cam{i}/t{k}.png, and optional ground-truth grids
gt/sigma_t{k}.nfg / gt/vel_t{k}.nfg.  Reference frames are rendered with
the same quadrature renderer the reconstruction uses, so image formation
matches between target and model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rendering as rn
from .rendering import Camera

GRID_MAGIC = b"NFGRID1"


# ---------------------------------------------------------------------------
# grid fields


@dataclass
class GridField:
    """Uniform grid of scalar (1) or vector (3) samples at cell centers.

    ``data`` has shape (nx, ny, nz) or (nx, ny, nz, 3), C-order;
    ``bounds`` is the physical box ((lo3), (hi3)); ``frame_dt`` records
    the physical time per frame of the sequence the grid belongs to.
    ``time`` is runtime-only metadata (normalized frame time), not part
    of the file format.
    """

    data: np.ndarray
    bounds: tuple
    frame_dt: float = 1.0
    time: float | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        lo = np.asarray(self.bounds[0], dtype=np.float64)
        hi = np.asarray(self.bounds[1], dtype=np.float64)
        if not (hi > lo).all():
            raise ValueError("grid bounds are empty")
        self.bounds = (lo, hi)
        if self.data.ndim == 3:
            pass
        elif self.data.ndim == 4 and self.data.shape[3] == 3:
            pass
        else:
            raise ValueError("grid data must be (nx,ny,nz) or (nx,ny,nz,3)")
        if min(self.data.shape[:3]) < 2:
            raise ValueError("grids need at least 2 cells per axis")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 3 else 3

    def cell_size(self) -> np.ndarray:
        lo, hi = self.bounds
        return (hi - lo) / np.asarray(self.dims)

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) world positions of cell centers."""
        lo, _ = self.bounds
        h = self.cell_size()
        axes = [lo[i] + (np.arange(self.dims[i]) + 0.5) * h[i] for i in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def sample(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at world positions (clamped to the box)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        lo, _ = self.bounds
        h = self.cell_size()
        # continuous cell-center coordinates
        q = (pts - lo) / h - 0.5
        out = _trilinear(self.data, q)
        return out[..., 0] if self.channels == 1 else out

    def copy(self) -> "GridField":
        return GridField(self.data.copy(), self.bounds, self.frame_dt, self.time)


def _trilinear(data: np.ndarray, q: np.ndarray) -> np.ndarray:
    dims = data.shape[:3]
    vals = data if data.ndim == 4 else data[..., None]
    # queries within rounding distance of a cell center snap onto it, so
    # center lookups reproduce stored values exactly
    nearest = np.rint(q)
    q = np.where(np.abs(q - nearest) < 1e-9, nearest, q)
    i0 = np.floor(q).astype(int)
    frac = q - i0
    out = 0.0
    for corner in range(8):
        offs = [(corner >> a) & 1 for a in range(3)]
        idx = [np.clip(i0[:, a] + offs[a], 0, dims[a] - 1) for a in range(3)]
        w = np.ones(len(q))
        for a in range(3):
            w = w * (frac[:, a] if offs[a] else 1.0 - frac[:, a])
        out = out + w[:, None] * vals[idx[0], idx[1], idx[2], :]
    return out


def save_grid(path, grid: GridField) -> None:
    """NFGRID1: magic, LE header (dims u32x3, channels u32, bounds 6xf64,
    frame_dt f64), then float32 data in C order."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        nx, ny, nz = grid.dims
        lo, hi = grid.bounds
        fh.write(struct.pack("<IIII", nx, ny, nz, grid.channels))
        fh.write(struct.pack("<6d", *lo, *hi))
        fh.write(struct.pack("<d", grid.frame_dt))
        fh.write(grid.data.astype("<f4").tobytes())


def load_grid(path) -> GridField:
    with open(path, "rb") as fh:
        if fh.read(len(GRID_MAGIC)) != GRID_MAGIC:
            raise ValueError("not a grid file (bad magic)")
        nx, ny, nz, ch = struct.unpack("<IIII", fh.read(16))
        b = struct.unpack("<6d", fh.read(48))
        frame_dt = struct.unpack("<d", fh.read(8))[0]
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shape = (nx, ny, nz) if ch == 1 else (nx, ny, nz, 3)
    return GridField(data.reshape(shape), (b[:3], b[3:]), frame_dt)


def downsample_to(grid: GridField, dims: tuple[int, int, int]) -> GridField:
    """Resample onto a coarser/finer grid by trilinear interpolation."""
    lo, hi = grid.bounds
    h = (hi - lo) / np.asarray(dims)
    axes = [lo[i] + (np.arange(dims[i]) + 0.5) * h[i] for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    vals = grid.sample(pts)
    shape = dims if grid.channels == 1 else (*dims, 3)
    return GridField(vals.reshape(shape), grid.bounds, grid.frame_dt, grid.time)


# ---------------------------------------------------------------------------
# domain bookkeeping


@dataclass
class Domain:
    """Maps world positions and frame indices to network coordinates.

    Positions normalize to [-1, 1]^3 over ``bounds``; frame k of
    ``n_frames`` maps to t = k / (n_frames - 1) in [0, 1].  ``frame_dt``
    below is that normalized step: physics residuals are stated per
    frame, renders per normalized time.
    """

    bounds: tuple
    n_frames: int

    def __post_init__(self):
        lo = np.asarray(self.bounds[0], dtype=np.float64)
        hi = np.asarray(self.bounds[1], dtype=np.float64)
        self.bounds = (lo, hi)

    @property
    def frame_dt(self) -> float:
        return 1.0 / max(self.n_frames - 1, 1)

    def to_unit(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        return 2.0 * (np.asarray(pts) - lo) / (hi - lo) - 1.0

    def unit_scale(self) -> np.ndarray:
        """d(unit coordinate) / d(world coordinate) per axis."""
        lo, hi = self.bounds
        return 2.0 / (hi - lo)

    def time_of_frame(self, k) -> float:
        return float(k) * self.frame_dt if self.n_frames > 1 else 0.0


# ---------------------------------------------------------------------------
# analytic flows


def analytic_flow(kind: str, params: dict, pts: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Closed-form velocity fields for residual and advection tests."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if kind == "rigid_rotation":
        omega = params.get("omega", 1.0)
        center = np.asarray(params.get("center", (0.0, 0.0, 0.0)))
        cx, cy = x - center[0], y - center[1]
        return np.stack([omega * cy, -omega * cx, np.zeros_like(z)], axis=1)
    if kind == "uniform_translation":
        v = np.asarray(params["v"], dtype=np.float64)
        return np.broadcast_to(v, pts.shape).copy()
    if kind == "taylor_green":
        a = params.get("amplitude", 1.0)
        k = params.get("wavenumber", 1.0)
        u = a * np.sin(k * x) * np.cos(k * y)
        v = -a * np.cos(k * x) * np.sin(k * y)
        return np.stack([u, v, np.zeros_like(z)], axis=1)
    raise ValueError(f"unknown analytic flow kind {kind!r}")


def gaussian_blob(pts: np.ndarray, center, radius: float, peak: float = 1.0) -> np.ndarray:
    d2 = np.sum((np.atleast_2d(pts) - np.asarray(center)) ** 2, axis=1)
    return peak * np.exp(-0.5 * d2 / radius ** 2)


# ---------------------------------------------------------------------------
# semi-Lagrangian advection


def advect_semi_lagrangian(sigma: GridField, vel: GridField, dt: float,
                           substeps: int = 1) -> GridField:
    """Backtrace cell centers through ``vel`` (world units per time unit)
    and trilinearly interpolate ``sigma``; traces clamp to the box, so
    the result stays within the input extrema."""
    if sigma.dims != vel.dims or vel.channels != 3:
        raise ValueError("advection needs matching dims and a vector velocity")
    out = sigma
    step = dt / substeps
    for _ in range(substeps):
        pts = out.cell_centers().reshape(-1, 3)
        traced = pts - vel.sample(pts) * step
        lo, hi = sigma.bounds
        traced = np.clip(traced, lo, hi)
        vals = out.sample(traced)
        shape = out.dims if out.channels == 1 else (*out.dims, 3)
        out = GridField(vals.reshape(shape), sigma.bounds, sigma.frame_dt, sigma.time)
    return out


# ---------------------------------------------------------------------------
# miniature buoyant-plume solver


@dataclass
class PlumeConfig:
    dims: tuple = (32, 32, 32)
    n_frames: int = 20
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    dt: float = 0.07
    buoyancy: float = 1.8
    source_center: tuple = (0.0, -0.72, 0.0)
    source_radius: float = 0.22
    source_rate: float = 0.9
    initial_density: float = 0.0   # peak of a seed blob present at frame 0
    swirl: float = 0.3
    jacobi_iters: int = 40
    seed: int = 0


def _divergence_grid(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    div = np.zeros(u.shape[:3])
    for a in range(3):
        div += _central_diff(u[..., a], a, h[a])
    return div


def _central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)
    # one-sided at the boundary slabs
    sl_lo = [slice(None)] * 3
    sl_lo[axis] = 0
    sl_lo2 = list(sl_lo)
    sl_lo2[axis] = 1
    out[tuple(sl_lo)] = (np.take(f, 1, axis) - np.take(f, 0, axis)) / h
    sl_hi = [slice(None)] * 3
    sl_hi[axis] = -1
    out[tuple(sl_hi)] = (np.take(f, -1, axis) - np.take(f, -2, axis)) / h
    return out


def pressure_project(u: np.ndarray, h: np.ndarray, iters: int = 40,
                     p0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Jacobi pressure solve on a collocated grid; closed (zero normal
    velocity) boundaries.  ``p0`` warm-starts the iteration; returns
    (projected velocity, pressure)."""
    u = u.copy()
    for a in range(3):
        sl = [slice(None)] * 4
        sl[a] = 0
        sl[3] = a
        u[tuple(sl)] = 0.0
        sl[a] = -1
        u[tuple(sl)] = 0.0
    div = _divergence_grid(u, h)
    p = np.zeros(u.shape[:3]) if p0 is None else p0.copy()
    h2 = float(np.mean(h) ** 2)
    for _ in range(iters):
        nb = (np.roll(p, 1, 0) + np.roll(p, -1, 0) +
              np.roll(p, 1, 1) + np.roll(p, -1, 1) +
              np.roll(p, 1, 2) + np.roll(p, -1, 2))
        # Neumann boundary: mirror the interior neighbor
        nb = _neumann_fix(nb, p)
        p = (nb - div * h2) / 6.0
    for a in range(3):
        u[..., a] -= _central_diff(p, a, h[a])
        sl = [slice(None)] * 4
        sl[a] = 0
        sl[3] = a
        u[tuple(sl)] = 0.0
        sl[a] = -1
        u[tuple(sl)] = 0.0
    return u, p


def _neumann_fix(nb: np.ndarray, p: np.ndarray) -> np.ndarray:
    # np.roll wrapped the opposite slab in; mirror the local value instead
    for a in range(3):
        lo = [slice(None)] * 3
        lo[a] = 0
        hi = [slice(None)] * 3
        hi[a] = -1
        nb[tuple(lo)] += np.take(p, 0, a) - np.take(p, -1, a)
        nb[tuple(hi)] += np.take(p, -1, a) - np.take(p, 0, a)
    return nb


def simulate_plume(config: PlumeConfig) -> list[tuple[GridField, GridField]]:
    """Buoyant smoke in a closed box: advect, add buoyancy + swirl,
    project to low divergence.  Returns per-frame (density, velocity);
    velocities are in world units per frame."""
    dims = tuple(config.dims)
    if max(dims) > 64:
        raise ValueError("plume solver is desk-scale: dims capped at 64^3")
    bounds = (np.asarray(config.bounds[0], float), np.asarray(config.bounds[1], float))
    h = (bounds[1] - bounds[0]) / np.asarray(dims)
    sigma = GridField(np.zeros(dims), bounds)
    vel = GridField(np.zeros((*dims, 3)), bounds)
    centers = sigma.cell_centers().reshape(-1, 3)
    source = gaussian_blob(centers, config.source_center, config.source_radius,
                           config.source_rate).reshape(dims)
    if config.initial_density > 0:
        sigma.data += gaussian_blob(centers, config.source_center,
                                    config.source_radius * 1.5,
                                    config.initial_density).reshape(dims)
    rng = np.random.default_rng(config.seed)
    theta = rng.uniform(0, 2 * np.pi)
    swirl_axis = np.array([np.cos(theta), 0.0, np.sin(theta)])

    frames = []
    pressure = None
    for k in range(config.n_frames):
        # emit smoke, advect both fields, apply forces, project
        if config.source_rate > 0:
            sigma.data = np.minimum(sigma.data + source * config.dt, 1.5)
        sigma = advect_semi_lagrangian(sigma, vel, config.dt)
        adv_v = advect_semi_lagrangian(vel, vel, config.dt)
        v = adv_v.data
        v[..., 1] += config.buoyancy * sigma.data * config.dt
        r = centers - np.asarray(config.source_center)
        swirl = np.cross(np.broadcast_to(swirl_axis, r.shape), r).reshape(*dims, 3)
        v += config.swirl * swirl * sigma.data[..., None] * config.dt
        v, pressure = pressure_project(v, h, config.jacobi_iters, pressure)
        vel = GridField(v, bounds)
        t = k / max(config.n_frames - 1, 1)
        sig_out = sigma.copy()
        sig_out.time = t
        # per-frame displacement field: world units per frame
        vel_out = GridField(v * config.dt, bounds, frame_dt=config.dt, time=t)
        sig_out.frame_dt = config.dt
        frames.append((sig_out, vel_out))
    return frames


# ---------------------------------------------------------------------------
# datasets


@dataclass
class SceneDataset:
    """Cameras, per-camera frame images, timestamps, and ground truth."""

    cameras: list
    frames: list          # frames[cam][k] -> (H, W, 3) float image
    timestamps: list
    background: np.ndarray
    bounds: tuple
    gt_sigma: list = field(default_factory=list)
    gt_velocity: list = field(default_factory=list)
    held_out: list = field(default_factory=list)  # camera indices excluded from training

    def __post_init__(self):
        counts = {len(f) for f in self.frames}
        if len(counts) > 1:
            raise ValueError("all cameras must share the frame count")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if (np.diff(ts) <= 0).any():
            raise ValueError("timestamps must be strictly increasing")
        self.background = np.asarray(self.background, dtype=np.float64)

    @property
    def n_frames(self) -> int:
        return len(self.timestamps)

    def domain(self) -> Domain:
        return Domain(self.bounds, self.n_frames)

    def training_cameras(self) -> list[int]:
        return [i for i in range(len(self.cameras)) if i not in self.held_out]


def render_reference(sigma_frames: list[GridField], cameras: list[Camera],
                     background, emission=(1.0, 1.0, 1.0),
                     k_samples: int = 96) -> list[list[np.ndarray]]:
    """Render ground-truth grids through the shared quadrature renderer.

    Constant emission color; deterministic sampling.  Returns
    images[cam][frame]."""
    emission = np.asarray(emission, dtype=np.float64)
    images = []
    for cam in cameras:
        per_cam = []
        for grid in sigma_frames:
            def radiance(pts4, grid=grid):
                sig = grid.sample(pts4[:, :3])[:, None]
                col = np.broadcast_to(emission, (len(pts4), 3))
                return col, sig

            img = rn.render_image(cam, radiance, grid.bounds, grid.time or 0.0,
                                  k_coarse=k_samples, k_fine=0, background=background)
            per_cam.append(img)
        images.append(per_cam)
    return images


def save_dataset(path, dataset: SceneDataset) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "cameras": [c.to_json() for c in dataset.cameras],
        "timestamps": list(map(float, dataset.timestamps)),
        "background": dataset.background.tolist(),
        "bounds": [np.asarray(dataset.bounds[0]).tolist(),
                   np.asarray(dataset.bounds[1]).tolist()],
        "held_out": list(dataset.held_out),
    }
    with open(root / "scene.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    for i, per_cam in enumerate(dataset.frames):
        cam_dir = root / "frames" / f"cam{i}"
        cam_dir.mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(per_cam):
            rn.write_png(cam_dir / f"t{k}.png", img)
    if dataset.gt_sigma:
        gt = root / "gt"
        gt.mkdir(exist_ok=True)
        for k, grid in enumerate(dataset.gt_sigma):
            save_grid(gt / f"sigma_t{k}.nfg", grid)
        for k, grid in enumerate(dataset.gt_velocity):
            save_grid(gt / f"vel_t{k}.nfg", grid)


def load_dataset(path) -> SceneDataset:
    root = Path(path)
    meta_path = root / "scene.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no scene.json under {root}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    cameras = [Camera.from_json(c) for c in meta["cameras"]]
    frames = []
    for i in range(len(cameras)):
        cam_dir = root / "frames" / f"cam{i}"
        per_cam = [rn.read_png(cam_dir / f"t{k}.png")
                   for k in range(len(meta["timestamps"]))]
        frames.append(per_cam)
    gt_sigma, gt_velocity = [], []
    gt_dir = root / "gt"
    if gt_dir.exists():
        k = 0
        while (gt_dir / f"sigma_t{k}.nfg").exists():
            grid = load_grid(gt_dir / f"sigma_t{k}.nfg")
            grid.time = k / max(len(meta["timestamps"]) - 1, 1)
            gt_sigma.append(grid)
            k += 1
        k = 0
        while (gt_dir / f"vel_t{k}.nfg").exists():
            grid = load_grid(gt_dir / f"vel_t{k}.nfg")
            grid.time = k / max(len(meta["timestamps"]) - 1, 1)
            gt_velocity.append(grid)
            k += 1
    return SceneDataset(cameras, frames, meta["timestamps"],
                        np.asarray(meta["background"]),
                        (np.asarray(meta["bounds"][0]), np.asarray(meta["bounds"][1])),
                        gt_sigma, gt_velocity, meta.get("held_out", []))


# ---------------------------------------------------------------------------
# canonical toy scenes


def circle_cameras(n: int, radius: float, target=(0, 0, 0), height: float = 0.0,
                   fov_deg: float = 48.0, width: int = 64, height_px: int = 64):
    cams = []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        pos = np.array([radius * np.cos(a), height, radius * np.sin(a)])
        cams.append(rn.look_at_camera(pos, target, fov_deg=fov_deg,
                                      width=width, height=height_px))
    return cams


def make_toy_plume(n_frames: int = 20, dims=(32, 32, 32), n_cameras: int = 5,
                   image_size: int = 64, seed: int = 0,
                   background=(0.0, 0.0, 0.0),
                   config: PlumeConfig | None = None) -> SceneDataset:
    """Canonical desk-scale dataset: simulated plume, 5 training cameras
    on a circle plus one held-out viewpoint, black background."""
    if config is None:
        config = PlumeConfig(dims=dims, n_frames=n_frames, seed=seed)
    frames = simulate_plume(config)
    sigma_frames = [s for s, _ in frames]
    vel_frames = [v for _, v in frames]
    cams = circle_cameras(n_cameras, radius=3.3, width=image_size, height_px=image_size)
    held = rn.look_at_camera(np.array([2.1, 2.2, 2.1]), (0, 0, 0), fov_deg=48.0,
                             width=image_size, height=image_size)
    cameras = cams + [held]
    images = render_reference(sigma_frames, cameras, background)
    nf = config.n_frames
    timestamps = [k / max(nf - 1, 1) for k in range(nf)]
    return SceneDataset(cameras, images, timestamps, np.asarray(background),
                        sigma_frames[0].bounds, sigma_frames, vel_frames,
                        held_out=[len(cameras) - 1])


def make_hybrid_box_scene(n_frames: int = 12, dims=(32, 32, 32), n_cameras: int = 5,
                          image_size: int = 64, seed: int = 0,
                          background=(0.0, 0.0, 0.0)) -> SceneDataset:
    """Static box obstacle plus a translating smoke blob.

    The box density is time-invariant; the blob orbits around it.  Used
    for the static/dynamic separation property."""
    bounds = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
    base = GridField(np.zeros(dims), bounds)
    centers = base.cell_centers().reshape(-1, 3)
    box_lo, box_hi = np.array([-0.28, -0.6, -0.28]), np.array([0.28, 0.1, 0.28])
    inside = np.all((centers >= box_lo) & (centers <= box_hi), axis=1)
    box_sigma = np.where(inside, 14.0, 0.0).reshape(dims)

    sigma_frames, vel_frames = [], []
    for k in range(n_frames):
        t = k / max(n_frames - 1, 1)
        angle = 2.0 * np.pi * t * 0.75
        c = np.array([0.55 * np.cos(angle), 0.55, 0.55 * np.sin(angle)])
        blob = gaussian_blob(centers, c, 0.2, 9.0).reshape(dims)
        total = box_sigma + blob
        sig = GridField(total, bounds, time=t)
        # orbital velocity of the blob (world units per frame)
        w = 2.0 * np.pi * 0.75 / max(n_frames - 1, 1)
        u = np.stack([-w * centers[:, 2], np.zeros(len(centers)), w * centers[:, 0]],
                     axis=1).reshape(*dims, 3)
        u *= (blob > 1e-3)[..., None]
        sigma_frames.append(sig)
        vel_frames.append(GridField(u, bounds, time=t))
    cameras = circle_cameras(n_cameras, radius=3.1, height=0.6,
                             width=image_size, height_px=image_size)
    # box and blob colored differently so separation is observable
    images = []
    for cam in cameras:
        per_cam = []
        for sig_g, k in zip(sigma_frames, range(n_frames)):
            blob_g = GridField(sig_g.data - box_sigma, bounds, time=sig_g.time)

            def radiance(pts4, blob_g=blob_g):
                s_box = GridField(box_sigma, bounds).sample(pts4[:, :3])
                s_blob = np.maximum(blob_g.sample(pts4[:, :3]), 0.0)
                sig = (s_box + s_blob)[:, None]
                frac = np.where(sig[:, 0] > 1e-9, s_blob / np.maximum(sig[:, 0], 1e-9), 0.0)
                box_col = np.array([0.9, 0.35, 0.15])
                blob_col = np.array([0.85, 0.9, 1.0])
                col = frac[:, None] * blob_col + (1 - frac[:, None]) * box_col
                return col, sig

            img = rn.render_image(cam, radiance, bounds, sig_g.time or 0.0,
                                  k_coarse=96, k_fine=0, background=background)
            per_cam.append(img)
        images.append(per_cam)
    timestamps = [k / max(n_frames - 1, 1) for k in range(n_frames)]
    ds = SceneDataset(cameras, images, timestamps, np.asarray(background), bounds,
                      sigma_frames, vel_frames)
    ds.box_mask = inside.reshape(dims)  # runtime-only, for evaluation
    return ds
