"""Request/response models of the reconstruction service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    preset: Literal["toy-plume", "hybrid-box"] = "toy-plume"
    out_dir: str
    seed: int = 0
    n_frames: int = Field(20, ge=1)
    dims: int = Field(32, ge=4, le=64)
    n_cameras: int = Field(5, ge=1)
    image_size: int = Field(64, ge=16)


class GenerateResponse(BaseModel):
    out_dir: str
    preset: str
    n_frames: int
    n_cameras: int
    held_out: list[int]


class TrainOverrides(BaseModel):
    """Optional TrainConfig fields; unset fields keep their defaults."""

    total_iters: Optional[int] = None
    grow_steps: Optional[int] = None
    static_warmup: Optional[int] = None
    rays_per_batch: Optional[int] = None
    patch_size: Optional[int] = None
    patch_stride_max: Optional[int] = None
    residual_points: Optional[int] = None
    k_coarse: Optional[int] = None
    k_fine: Optional[int] = None
    lr: Optional[float] = None
    lr_decay: Optional[float] = None
    lr_decay_every: Optional[int] = None
    hidden: Optional[int] = None
    n_hidden: Optional[int] = None
    velocity_hidden: Optional[int] = None
    d2v_every: Optional[int] = None
    d2v_rms: Optional[bool] = None
    checkpoint_every: Optional[int] = None


class WeightOverrides(BaseModel):
    w_vgg: Optional[float] = None
    w_ghost: Optional[float] = None
    w_nse: Optional[float] = None
    w_div: Optional[float] = None
    w_d2v: Optional[float] = None
    w_overlay: Optional[float] = None


class TrainRequest(BaseModel):
    scene_dir: str
    out_dir: str
    seed: int = 0
    hybrid: bool = False
    config: Optional[TrainOverrides] = None
    weights: Optional[WeightOverrides] = None


class TrainResponse(BaseModel):
    out_dir: str
    iterations: int
    final_losses: dict
    checkpoints: dict
    metrics_csv: str


class RenderRequest(BaseModel):
    run_dir: str
    scene_dir: str
    out_dir: str
    camera: int = 0
    frames: Optional[list[int]] = None
    slices: bool = True
    k_coarse: int = Field(32, ge=1)
    k_fine: int = Field(32, ge=0)


class RenderResponse(BaseModel):
    out_dir: str
    images: list[str]
    slices: list[str]


class EvalRequest(BaseModel):
    run_dir: str
    scene_dir: str
    out_dir: Optional[str] = None
    dims: Optional[int] = None


class EvalResponse(BaseModel):
    frames: list[dict]
    means: dict
    report_json: Optional[str] = None
    report_csv: Optional[str] = None
