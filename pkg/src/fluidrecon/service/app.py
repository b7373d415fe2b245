"""FastAPI service wrapping scene generation, training, rendering, and
evaluation.  The CLI is a thin client of these endpoints."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from .. import evaluation as ev
from .. import rendering as rn
from .. import scenes as sc
from ..fields import load_checkpoint
from ..training import LossWeights, NumericFailure, TrainConfig, train
from . import schemas as sm


class BadInput(ValueError):
    pass


def _overrides(model) -> dict:
    if model is None:
        return {}
    return {k: v for k, v in model.model_dump().items() if v is not None}


def load_run(run_dir: str):
    """Models of a finished run: (kind, radiance model(s), velocity model)."""
    run = Path(run_dir)
    if not run.exists():
        raise BadInput(f"run directory {run} does not exist")
    hid = load_checkpoint(run / "hid.ckpt")
    if (run / "static.ckpt").exists():
        return "hybrid", {"static": load_checkpoint(run / "static.ckpt"),
                          "fluid": load_checkpoint(run / "fluid.ckpt")}, hid
    return "simple", {"vis_coarse": load_checkpoint(run / "vis_coarse.ckpt"),
                      "vis_fine": load_checkpoint(run / "vis_fine.ckpt")}, hid


def create_app() -> FastAPI:
    app = FastAPI(title="fluidrecon", version=__version__)

    @app.exception_handler(BadInput)
    async def _bad_input(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "kind": "bad_input"})

    @app.exception_handler(FileNotFoundError)
    async def _missing(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "kind": "bad_input"})

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "kind": "bad_input"})

    @app.exception_handler(NumericFailure)
    async def _numeric(request, exc):
        return JSONResponse(status_code=500,
                            content={"error": str(exc), "kind": "numeric"})

    @app.get("/health", response_model=sm.HealthResponse)
    def health():
        return sm.HealthResponse(status="ok", version=__version__)

    @app.post("/scenes/generate", response_model=sm.GenerateResponse)
    def generate(req: sm.GenerateRequest):
        dims = (req.dims,) * 3
        if req.preset == "toy-plume":
            ds = sc.make_toy_plume(n_frames=req.n_frames, dims=dims,
                                   n_cameras=req.n_cameras, image_size=req.image_size,
                                   seed=req.seed)
        else:
            ds = sc.make_hybrid_box_scene(n_frames=req.n_frames, dims=dims,
                                          n_cameras=req.n_cameras,
                                          image_size=req.image_size, seed=req.seed)
        sc.save_dataset(req.out_dir, ds)
        return sm.GenerateResponse(out_dir=req.out_dir, preset=req.preset,
                                   n_frames=ds.n_frames, n_cameras=len(ds.cameras),
                                   held_out=list(ds.held_out))

    @app.post("/train", response_model=sm.TrainResponse)
    def train_endpoint(req: sm.TrainRequest):
        dataset = sc.load_dataset(req.scene_dir)
        cfg_kwargs = _overrides(req.config)
        cfg_kwargs["seed"] = req.seed
        config = TrainConfig(**cfg_kwargs)
        weights = LossWeights(**_overrides(req.weights))
        result = train(dataset, req.out_dir, config, weights, hybrid=req.hybrid)
        return sm.TrainResponse(
            out_dir=str(result.out_dir), iterations=result.iterations,
            final_losses=result.final_losses,
            checkpoints={k: str(v) for k, v in result.checkpoints.items()},
            metrics_csv=str(result.metrics_csv))

    @app.post("/render", response_model=sm.RenderResponse)
    def render(req: sm.RenderRequest):
        dataset = sc.load_dataset(req.scene_dir)
        kind, radiance, hid = load_run(req.run_dir)
        domain = dataset.domain()
        if not (0 <= req.camera < len(dataset.cameras)):
            raise BadInput(f"camera index {req.camera} out of range")
        cam = dataset.cameras[req.camera]
        frames = req.frames if req.frames is not None else list(range(dataset.n_frames))
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        images, slices = [], []

        from ..fields import radiance_from_raw

        def simple_fn(model):
            def fn(pts4):
                unit = np.concatenate([domain.to_unit(pts4[:, :3]), pts4[:, 3:4]],
                                      axis=1)
                if model.in_dim == 3:
                    unit = unit[:, :3]
                return radiance_from_raw(model.forward(unit))
            return fn

        if kind == "hybrid":
            s_fn = simple_fn(radiance["static"])
            f_fn = simple_fn(radiance["fluid"])

            def fn_fine(pts4):
                c_s, s_s = s_fn(pts4)
                c_f, s_f = f_fn(pts4)
                tot = s_s + s_f
                w = np.where(tot[:, 0] > 1e-12, (s_f / np.maximum(tot, 1e-12))[:, 0], 0.0)
                col = c_f * w[:, None] + c_s * (1 - w[:, None])
                return col, tot

            fn_coarse = fn_fine
        else:
            fn_coarse = simple_fn(radiance["vis_coarse"])
            fn_fine = simple_fn(radiance["vis_fine"])

        for k in frames:
            if not (0 <= k < dataset.n_frames):
                raise BadInput(f"frame {k} out of range")
            t = domain.time_of_frame(k)
            img = rn.render_image(cam, fn_coarse, domain.bounds, t,
                                  k_coarse=req.k_coarse, k_fine=req.k_fine,
                                  background=dataset.background,
                                  radiance_fn_fine=fn_fine)
            p = out / f"view_cam{req.camera}_t{k}.png"
            rn.write_png(p, img)
            images.append(str(p))

        if req.slices:
            dims = dataset.gt_sigma[0].dims if dataset.gt_sigma else (32, 32, 32)
            dens_model = radiance["fluid"] if kind == "hybrid" else radiance["vis_fine"]
            vel_frames = [ev.velocity_grid(hid, domain, dims, domain.time_of_frame(k))
                          for k in frames]
            vrange = ev.vorticity_range(vel_frames)
            for k, vel in zip(frames, vel_frames):
                t = domain.time_of_frame(k)
                sig = ev.density_grid(dens_model, domain, dims, t)
                for axis, name in ((0, "side"), (1, "top"), (2, "front")):
                    vimg = ev.velocity_slice_image(vel, sig, axis=axis)
                    p = out / f"velocity_{name}_t{k}.png"
                    rn.write_png(p, vimg)
                    slices.append(str(p))
                    wimg = ev.vorticity_slice_image(vel, axis=axis, fixed_range=vrange)
                    p = out / f"vorticity_{name}_t{k}.png"
                    rn.write_png(p, wimg)
                    slices.append(str(p))
        return sm.RenderResponse(out_dir=str(out), images=images, slices=slices)

    @app.post("/eval", response_model=sm.EvalResponse)
    def eval_endpoint(req: sm.EvalRequest):
        dataset = sc.load_dataset(req.scene_dir)
        if not dataset.gt_sigma:
            raise BadInput("scene has no ground-truth grids to evaluate against")
        kind, radiance, hid = load_run(req.run_dir)
        dens = radiance["fluid"] if kind == "hybrid" else radiance["vis_fine"]
        dims = (req.dims,) * 3 if req.dims else None
        report = ev.evaluate_fields(dataset, dens, hid, dims=dims)
        payload = report.to_json()
        rj = rc = None
        if req.out_dir:
            out = Path(req.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            rj = str(out / "metrics.json")
            rc = str(out / "metrics.csv")
            report.save(rj)
            report.save_csv(rc)
        return sm.EvalResponse(frames=payload["frames"], means=payload["means"],
                               report_json=rj, report_csv=rc)

    return app


app = create_app()
