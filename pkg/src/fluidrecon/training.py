"""Loss assembly, optimizer, schedules, and the training loop.

Each iteration renders a random ray batch plus one square patch (both
through the stochastic warp), evaluates the physics residuals at
importance-sampled points, and takes one Adam step per parameter store.
Every random draw comes from a purpose-keyed stream seeded by
(seed, iteration, purpose), so disabling a loss term leaves the other
terms' samples, and therefore their gradients, untouched.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import physics as ph
from . import rendering as rn
from .autodiff import ParamStore, Tape
from .fields import GrowingMlp, HybridVisModel, radiance_from_raw, save_checkpoint
from .scenes import SceneDataset

log = logging.getLogger(__name__)


class NumericFailure(RuntimeError):
    """Training hit a non-finite loss; the last saved checkpoint stands."""


# ---------------------------------------------------------------------------
# config


@dataclass
class LossWeights:
    """Scalar multipliers of the loss terms; the image term is fixed at 1."""

    w_img: float = 1.0
    w_vgg: float = 0.01
    w_ghost: float = 0.05
    w_nse: float = 1e-3
    w_div: float = 1.0
    w_d2v: float = 0.1
    w_overlay: float = 1e-3

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class TrainConfig:
    total_iters: int = 2000
    grow_steps: int = -1              # -1 -> total_iters // 2; 0 disables growing
    static_warmup: int = -1           # hybrid only; -1 -> 10% of total
    rays_per_batch: int = 96
    patch_size: int = 40
    patch_stride_max: int = 1
    residual_points: int = 128
    k_coarse: int = 32
    k_fine: int = 32
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = -1          # -1 -> total_iters // 4
    hidden: int = 64
    n_hidden: int = 5
    velocity_hidden: int = -1         # -1 -> same as hidden
    d2v_every: int = 20
    d2v_rms: bool = False             # RMS-normalized curl matching variant
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.grow_steps < 0:
            self.grow_steps = self.total_iters // 2
        if self.grow_steps > self.total_iters:
            raise ValueError("grow_steps must not exceed total_iters")
        if self.lr_decay_every < 0:
            self.lr_decay_every = max(self.total_iters // 4, 1)
        if self.static_warmup < 0:
            self.static_warmup = self.total_iters // 10
        if self.velocity_hidden < 0:
            self.velocity_hidden = self.hidden

    def lr_at(self, i: int) -> float:
        return self.lr * self.lr_decay ** (i // self.lr_decay_every)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = 0

    @classmethod
    def for_store(cls, store: ParamStore) -> "OptimizerState":
        return cls(np.zeros(store.size), np.zeros(store.size))


def adam_step(values: np.ndarray, grad: np.ndarray, state: OptimizerState,
              lr: float) -> None:
    """Bias-corrected Adam update in place; skips non-finite gradients."""
    if not np.all(np.isfinite(grad)):
        state.skipped += 1
        log.warning("skipping optimizer step %d: non-finite gradient", state.step + 1)
        return
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mh = state.m / (1 - state.beta1 ** state.step)
    vh = state.v / (1 - state.beta2 ** state.step)
    values -= lr * mh / (np.sqrt(vh) + state.eps)


# ---------------------------------------------------------------------------
# loss terms


def image_loss(renders, reference):
    """Mean over pixels of the summed squared RGB error, summed over the
    provided renders (coarse and fine)."""
    ref = np.asarray(reference, dtype=np.float64)
    total = None
    for color in renders:
        diff = color - ref
        term = ad.amean(ad.asum(diff * diff, axis=1))
        total = term if total is None else total + term
    return total


def ghost_loss(color, background, opacity):
    """Opacity penalty where the rendered color is near the background:
    mean over pixels of logistic(-msq(C - B)) * A."""
    diff = color - background
    msq = ad.amean(diff * diff, axis=1) if isinstance(diff, ad.Node) \
        else np.mean(diff * diff, axis=1)
    return ad.amean(ad.logistic(-msq) * opacity)


def ghost_loss_hybrid(composed, static, fluid, background):
    """Hybrid ghost regularizer: composed vs background, static vs
    background, and fluid vs the static color."""
    return (ghost_loss(composed.color, background, composed.opacity)
            + ghost_loss(static.color, background, static.opacity)
            + ghost_loss(fluid.color, ad.detach(static.color), fluid.opacity))


class GradientPyramidExtractor:
    """Built-in perceptual feature extractor: finite-difference gradient
    maps on a 3-level average pyramid, one feature vector per level.

    Stands in for a pretrained feature network behind the same interface:
    callable (3 channel images of shape (P, P)) -> list of flat feature
    vectors, tape-valued when the input is.
    """

    def __init__(self, levels: int = 3):
        self.levels = levels

    @staticmethod
    def _diff_matrix(n: int) -> np.ndarray:
        d = np.zeros((n - 1, n))
        d[np.arange(n - 1), np.arange(n - 1)] = -1.0
        d[np.arange(n - 1), np.arange(1, n)] = 1.0
        return d

    @staticmethod
    def _pool_matrix(n: int) -> np.ndarray:
        m = n // 2
        p = np.zeros((m, n))
        p[np.arange(m), 2 * np.arange(m)] = 0.5
        p[np.arange(m), 2 * np.arange(m) + 1] = 0.5
        return p

    def __call__(self, channels):
        feats = []
        imgs = list(channels)
        for level in range(self.levels):
            n = ad.value_of(imgs[0]).shape[0]
            if n < 2:
                break
            dy = self._diff_matrix(n)
            dxT = self._diff_matrix(n).T
            parts = []
            for img in imgs:
                gx = ad.matmul(img, dxT)          # horizontal differences
                gy = ad.matmul(dy, img)           # vertical differences
                parts.append(ad.reshape(gx, (n * (n - 1),)))
                parts.append(ad.reshape(gy, ((n - 1) * n,)))
            feats.append(ad.concat([ad.reshape(p, (ad.value_of(p).size, 1))
                                    for p in parts], axis=0))
            if n // 2 < 2 or level == self.levels - 1:
                break
            pool = self._pool_matrix(n)
            imgs = [ad.matmul(ad.matmul(pool, img), pool.T) for img in imgs]
        return feats


def perceptual_loss(rendered_channels, reference_channels, extractor):
    """Sum over feature levels of (1 - cosine similarity); a zero-norm
    feature vector makes its level contribute 1 (orthogonality)."""
    f_render = extractor(rendered_channels)
    f_ref = extractor(reference_channels)
    total = None
    for fr, fg in zip(f_render, f_ref):
        nr = float(np.linalg.norm(ad.value_of(fr)))
        ng = float(np.linalg.norm(ad.value_of(fg)))
        if nr == 0.0 or ng == 0.0:
            term = 1.0 if total is None else total + 1.0
            total = term
            continue
        dot = ad.asum(fr * fg)
        cos = dot / (ad.sqrt(ad.asum(fr * fr)) * ad.sqrt(ad.asum(fg * fg)))
        term = 1.0 - cos
        total = term if total is None else total + term
    return total if total is not None else 0.0


# ---------------------------------------------------------------------------
# trainer

# purpose keys for the per-iteration random streams
_RNG_FRAME, _RNG_RAYS, _RNG_PATCH, _RNG_WARP, _RNG_RESID, _RNG_D2V, _RNG_JITTER = range(7)


def _rng(seed: int, iteration: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, purpose])


@dataclass
class TrainResult:
    out_dir: Path
    iterations: int
    final_losses: dict
    checkpoints: dict
    metrics_csv: Path


class Trainer:
    """Owns the models, optimizer states, and the per-iteration step."""

    def __init__(self, dataset: SceneDataset, config: TrainConfig,
                 weights: LossWeights | None = None, hybrid: bool = False,
                 oracle=None, extractor=None):
        self.dataset = dataset
        self.config = config
        self.weights = weights or LossWeights()
        self.hybrid = hybrid
        self.domain = dataset.domain()
        self.extractor = extractor or GradientPyramidExtractor()
        self._validate()

        c = config
        if hybrid:
            static = GrowingMlp(3, c.hidden, c.n_hidden, 4, grow_total_steps=c.grow_steps)
            fluid = GrowingMlp(4, c.hidden, c.n_hidden, 4, grow_total_steps=c.grow_steps)
            static.init_siren(c.seed)
            fluid.init_siren(c.seed + 1)
            self.vis = HybridVisModel(static, fluid, c.static_warmup)
            self.radiance_models = {"static": static, "fluid": fluid}
        else:
            coarse = GrowingMlp(4, c.hidden, c.n_hidden, 4, grow_total_steps=c.grow_steps)
            fine = GrowingMlp(4, c.hidden, c.n_hidden, 4, grow_total_steps=c.grow_steps)
            coarse.init_siren(c.seed)
            fine.init_siren(c.seed + 1)
            self.radiance_models = {"vis_coarse": coarse, "vis_fine": fine}
        self.hid = GrowingMlp(4, c.velocity_hidden, c.n_hidden, 3,
                              grow_total_steps=c.grow_steps)
        self.hid.init_siren(c.seed + 2)

        self.oracle = oracle
        if self.oracle is None and self.weights.w_d2v > 0 and dataset.gt_velocity:
            self.oracle = ph.GroundTruthVelocityOracle(dataset.gt_velocity)

        self.stores = {name: m.store for name, m in self.radiance_models.items()}
        self.stores["hid"] = self.hid.store
        self.opt = {name: OptimizerState.for_store(s) for name, s in self.stores.items()}
        self.last_d2v = 0.0

    # ------------------------------------------------------------------
    def _validate(self):
        cam = self.dataset.cameras[0]
        span = self.config.patch_size * max(self.config.patch_stride_max, 1)
        if span > min(cam.width, cam.height):
            raise ValueError("patch does not fit inside the images")
        for c in self.dataset.cameras:
            if (c.width, c.height) != (cam.width, cam.height):
                raise ValueError("cameras disagree on resolution")
            if len(self.dataset.frames[0]) != self.dataset.n_frames:
                raise ValueError("frame count does not match timestamps")

    def _models_for_render(self):
        if self.hybrid:
            return self.vis.static_model, self.vis.fluid_model
        return self.radiance_models["vis_coarse"], self.radiance_models["vis_fine"]

    def density_model(self) -> GrowingMlp:
        return self.vis.fluid_model if self.hybrid else self.radiance_models["vis_fine"]

    # closure builders ---------------------------------------------------
    def _radiance_fn(self, model: GrowingMlp, tape: Tape | None, time_varying=True):
        params = model.params(tape) if tape is not None else model.params(None)
        domain = self.domain

        def fn(pts4):
            if isinstance(pts4, ad.Node):
                scale = np.append(domain.unit_scale(), 1.0)
                shift = np.append(-domain.unit_scale() * domain.bounds[0] - 1.0, 0.0)
                unit = pts4 * scale + shift
                inp = unit if time_varying else ad.cols(unit, 0, 3)
            else:
                unit = np.concatenate([domain.to_unit(pts4[:, :3]), pts4[:, 3:4]], axis=1)
                inp = unit if time_varying else unit[:, :3]
            raw = model.forward(inp, params=params)
            return radiance_from_raw(raw)

        return fn

    def _velocity_fn(self, tape: Tape | None):
        params = self.hid.params(tape) if tape is not None else self.hid.params(None)
        domain = self.domain

        def fn(pts4):
            if isinstance(pts4, ad.Node):
                scale = np.append(domain.unit_scale(), 1.0)
                shift = np.append(-domain.unit_scale() * domain.bounds[0] - 1.0, 0.0)
                unit = pts4 * scale + shift
            else:
                unit = np.concatenate([domain.to_unit(pts4[:, :3]), pts4[:, 3:4]], axis=1)
            return self.hid.forward(unit, params=params)

        return fn

    # batching -----------------------------------------------------------
    def _ray_batch(self, i: int, frame: int):
        rng = _rng(self.config.seed, i, _RNG_RAYS)
        cams = self.dataset.training_cameras()
        cam_idx = rng.integers(0, len(cams), self.config.rays_per_batch)
        pixels = np.stack([
            rng.integers(0, self.dataset.cameras[0].width, self.config.rays_per_batch),
            rng.integers(0, self.dataset.cameras[0].height, self.config.rays_per_batch),
        ], axis=1)
        origins = np.zeros((self.config.rays_per_batch, 3))
        dirs = np.zeros((self.config.rays_per_batch, 3))
        refs = np.zeros((self.config.rays_per_batch, 3))
        for j, (ci, px) in enumerate(zip(cam_idx, pixels)):
            cam = self.dataset.cameras[cams[ci]]
            o, d = cam.rays(px[None, :])
            origins[j], dirs[j] = o[0], d[0]
            refs[j] = self.dataset.frames[cams[ci]][frame][px[1], px[0]]
        return origins, dirs, refs

    def _patch(self, i: int, frame: int):
        rng = _rng(self.config.seed, i, _RNG_PATCH)
        cams = self.dataset.training_cameras()
        ci = cams[rng.integers(0, len(cams))]
        cam = self.dataset.cameras[ci]
        p = self.config.patch_size
        s = int(rng.integers(1, self.config.patch_stride_max + 1))
        x0 = int(rng.integers(0, cam.width - p * s + 1))
        y0 = int(rng.integers(0, cam.height - p * s + 1))
        cols_, rows_ = np.meshgrid(np.arange(x0, x0 + p * s, s),
                                   np.arange(y0, y0 + p * s, s))
        pixels = np.stack([cols_.ravel(), rows_.ravel()], axis=1)
        o, d = cam.rays(pixels)
        refs = self.dataset.frames[ci][frame][pixels[:, 1], pixels[:, 0]]
        return o, d, refs

    def _residual_points(self, i: int):
        rng = _rng(self.config.seed, i, _RNG_RESID)
        n = self.config.residual_points
        lo, hi = self.domain.bounds
        cand = rng.uniform(lo, hi, (2 * n, 3))
        t_cand = rng.uniform(0, self.dataset.n_frames - 1, 2 * n)
        dens = self.density_model()
        fn = self._radiance_fn(dens, None)
        sig = ad.value_of(fn(np.concatenate(
            [cand, (t_cand * self.domain.frame_dt)[:, None]], axis=1))[1])[:, 0]
        median = np.median(sig)
        heavy = np.nonzero(sig > median)[0]
        keep_uniform = rng.permutation(2 * n)[:n // 2]
        if len(heavy) == 0:
            pick = keep_uniform
            extra = rng.permutation(2 * n)[:n - len(keep_uniform)]
            idx = np.concatenate([pick, extra])
        else:
            resampled = heavy[rng.integers(0, len(heavy), n - n // 2)]
            idx = np.concatenate([keep_uniform, resampled])
        return cand[idx], t_cand[idx]

    # the step -----------------------------------------------------------
    def step(self, i: int) -> dict:
        c, w = self.config, self.weights
        for m in list(self.radiance_models.values()) + [self.hid]:
            m.current_step = i
        warming = self.hybrid and i < self.vis.static_warmup_steps

        frame = int(_rng(c.seed, i, _RNG_FRAME).integers(0, self.dataset.n_frames))
        t = self.domain.time_of_frame(frame)
        for store in self.stores.values():
            store.zero_grad()
        tape = Tape()

        o_r, d_r, ref_r = self._ray_batch(i, frame)
        o_p, d_p, ref_p = self._patch(i, frame)
        origins = np.concatenate([o_r, o_p])
        dirs = np.concatenate([d_r, d_p])
        refs = np.concatenate([ref_r, ref_p])
        near, far, hit = rn.intersect_aabb(origins, dirs, self.domain.bounds)

        warp_rng = _rng(c.seed, i, _RNG_WARP)
        warp = rn.draw_warp(warp_rng, int(hit.sum()), t, self.domain.frame_dt) \
            if not warming else None
        jitter = _rng(c.seed, i, _RNG_JITTER)

        losses: dict[str, object] = {}
        vfn = self._velocity_fn(tape)
        bg = self.dataset.background

        if self.hybrid:
            sfn = self._radiance_fn(self.vis.static_model, tape, time_varying=False)
            ffn = self._radiance_fn(self.vis.fluid_model, tape)
            if warming:
                cpix, fpix, _ = rn.render_rays(sfn, sfn, vfn, origins[hit], dirs[hit],
                                               near[hit], far[hit], t, c.k_coarse,
                                               c.k_fine, jitter, bg, None)
                renders = [cpix, fpix]
                ghost = (ghost_loss(cpix.color, bg, cpix.opacity)
                         + ghost_loss(fpix.color, bg, fpix.opacity))
            else:
                coarse, fine = rn.render_rays_hybrid(sfn, ffn, vfn, origins[hit],
                                                     dirs[hit], near[hit], far[hit], t,
                                                     c.k_coarse, c.k_fine, jitter, bg,
                                                     warp)
                renders = [coarse["composed"], fine["composed"]]
                ghost = (ghost_loss_hybrid(coarse["composed"], coarse["static"],
                                           coarse["fluid"], bg)
                         + ghost_loss_hybrid(fine["composed"], fine["static"],
                                             fine["fluid"], bg))
        else:
            cfn = self._radiance_fn(self.radiance_models["vis_coarse"], tape)
            ffn = self._radiance_fn(self.radiance_models["vis_fine"], tape)
            cpix, fpix, _ = rn.render_rays(cfn, ffn, vfn, origins[hit], dirs[hit],
                                           near[hit], far[hit], t, c.k_coarse, c.k_fine,
                                           jitter, bg, warp)
            renders = [cpix, fpix]
            ghost = (ghost_loss(cpix.color, bg, cpix.opacity)
                     + ghost_loss(fpix.color, bg, fpix.opacity))

        # image loss over the whole batch: rendered rows plus constant
        # background rows for rays that miss the domain box
        miss_term = float(np.sum((refs[~hit] - bg) ** 2))
        n_total = len(refs)
        img_terms = None
        for pix in renders:
            diff = pix.color - refs[hit]
            term = (ad.asum(diff * diff) + miss_term) / n_total
            img_terms = term if img_terms is None else img_terms + term
        losses["L_img"] = img_terms
        losses["L_ghost"] = ghost * 0.5  # mean of the two renders

        if w.w_vgg > 0:
            p = c.patch_size
            n_ray = len(o_r)
            patch_hit = hit[n_ray:]
            fine_pix = renders[1]
            # rendered colors of the patch rows sit at the tail of the render
            n_hit_rays = int(hit[:n_ray].sum())
            patch_rows = _slice_rows(fine_pix.color, n_hit_rays,
                                     n_hit_rays + int(patch_hit.sum()))
            base = np.tile(bg, (p * p, 1))
            patch_img = ad.scatter_rows(base, patch_rows, np.nonzero(patch_hit)[0])
            chans_r = [ad.reshape(ad.cols(patch_img, k2, k2 + 1), (p, p))
                       for k2 in range(3)]
            chans_g = [ref_p[:, k2].reshape(p, p) for k2 in range(3)]
            losses["L_VGG"] = perceptual_loss(chans_r, chans_g, self.extractor)

        if not warming:
            pts, t_fr = self._residual_points(i)
            dens_field = ph.ModelDensityField(self.density_model(), self.domain)
            vel_field = ph.ModelVelocityField(self.hid, self.domain)
            sig_derivs = dens_field.sigma_with_derivs(tape, pts, t_fr)
            u_derivs = vel_field.velocity_with_derivs(tape, pts, t_fr)
            losses["L_transport"] = ad.amean(ph.transport_from_derivs(sig_derivs,
                                                                      u_derivs[0]))
            if w.w_nse > 0:
                momentum, divterm = ph.nse_from_derivs(u_derivs, w.w_div)
                losses["L_NSE"] = ad.amean(momentum + divterm)
            if self.hybrid and w.w_overlay > 0:
                sfn = self._radiance_fn(self.vis.static_model, tape, time_varying=False)
                ffn = self._radiance_fn(self.vis.fluid_model, tape)
                pts4 = np.concatenate([pts, (t_fr * self.domain.frame_dt)[:, None]],
                                      axis=1)
                _, sig_s = sfn(pts4)
                _, sig_f = ffn(pts4)
                losses["L_overlay"] = ad.amean(ph.overlay_loss(sig_s, sig_f))

        weight_of = {"L_img": w.w_img, "L_VGG": w.w_vgg, "L_ghost": w.w_ghost,
                     "L_transport": 1.0, "L_NSE": w.w_nse, "L_overlay": w.w_overlay}
        total = None
        for name, node in losses.items():
            weight = weight_of[name]
            if weight == 0 or node is None:
                continue
            term = node * weight
            total = term if total is None else total + term

        value = float(ad.value_of(total))
        if not np.isfinite(value):
            raise NumericFailure(f"non-finite loss at iteration {i}")
        tape.backward(total)

        # the prior loss backpropagates chunk-wise on its own tapes; its
        # gradient lands in the same stores before the optimizer step
        if (not warming and w.w_d2v > 0 and self.oracle is not None
                and i % c.d2v_every == 0):
            t_f = float(_rng(c.seed, i, _RNG_D2V).uniform(0, self.dataset.n_frames - 1))
            vel_field = ph.ModelVelocityField(self.hid, self.domain)
            d2v_value = ph.apply_d2v_loss(self.density_model(), vel_field, self.domain,
                                          self.oracle, t_f, w.w_d2v,
                                          rms_normalize=c.d2v_rms)
            losses["L_d2v"] = d2v_value
            self.last_d2v = d2v_value
            if not np.isfinite(d2v_value):
                raise NumericFailure(f"non-finite prior loss at iteration {i}")
            value += w.w_d2v * d2v_value
        lr = c.lr_at(i)
        trainable = (["static"] if warming else list(self.stores))
        for name in trainable:
            store = self.stores[name]
            adam_step(store.values, store.grad, self.opt[name], lr)

        out = {name: float(ad.value_of(node)) for name, node in losses.items()
               if node is not None}
        out["total"] = value
        out["lr"] = lr
        return out


def _slice_rows(node, r0: int, r1: int):
    """Row slice of a 2D tape node (via transpose-free gather)."""
    n = ad.value_of(node).shape[0]
    sel = np.zeros((r1 - r0, n))
    sel[np.arange(r1 - r0), np.arange(r0, r1)] = 1.0
    return ad.matmul(sel, node)


def train(dataset: SceneDataset, out_dir, config: TrainConfig,
          weights: LossWeights | None = None, hybrid: bool = False,
          oracle=None, extractor=None, log_every: int = 50) -> TrainResult:
    """Run the optimization and write checkpoints, metrics.csv, and the
    effective config to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(dataset, config, weights, hybrid, oracle, extractor)
    csv_path = out / "metrics.csv"
    columns = ["iter", "L_img", "L_VGG", "L_ghost", "L_transport", "L_NSE",
               "L_d2v", "L_overlay", "lr", "m_a"]
    with open(out / "config.json", "w") as fh:
        json.dump({"config": asdict(config), "weights": asdict(trainer.weights),
                   "hybrid": hybrid}, fh, indent=1)

    def save_all():
        paths = {}
        for name, model in trainer.radiance_models.items():
            p = out / f"{name}.ckpt"
            save_checkpoint(model, p)
            paths[name] = p
        p = out / "hid.ckpt"
        save_checkpoint(trainer.hid, p)
        paths["hid"] = p
        return paths

    checkpoints = save_all()
    last = {}
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for i in range(config.total_iters):
            try:
                last = trainer.step(i)
            except NumericFailure:
                fh.flush()
                raise
            m_a = _active_layer(i, config.grow_steps, trainer.hid.n_hidden)
            writer.writerow([i,
                             last.get("L_img", 0.0), last.get("L_VGG", 0.0),
                             last.get("L_ghost", 0.0), last.get("L_transport", 0.0),
                             last.get("L_NSE", 0.0), last.get("L_d2v", trainer.last_d2v),
                             last.get("L_overlay", 0.0), last["lr"], m_a])
            if log_every and i % log_every == 0:
                log.info("iter %d: total %.5f img %.5f", i, last["total"],
                         last.get("L_img", 0.0))
            if config.checkpoint_every and (i + 1) % config.checkpoint_every == 0:
                checkpoints = save_all()
    checkpoints = save_all()
    return TrainResult(out, config.total_iters, last, checkpoints, csv_path)


def _active_layer(i: int, grow_steps: int, n_hidden: int) -> float:
    if grow_steps <= 0:
        return float(n_hidden - 1)
    return min(1.0 + (n_hidden - 2.0) * i / grow_steps, float(n_hidden - 1))
