"""Physics-informed residuals and priors over the learned fields.

All residuals are stated in frame units: velocity is world length per
frame, time derivatives are per frame.  Because the networks see
normalized coordinates, exact input derivatives from the tape are
rescaled by the domain's unit-per-world and unit-per-frame factors
before entering a residual.

Field access goes through two adapter protocols:

* density adapter: ``sigma_with_derivs(tape, pts_world, t_frames)``
  returning (sigma, dsigma/dx, dsigma/dy, dsigma/dz, dsigma/dt) nodes,
  space derivatives per world unit, time per frame;
* velocity adapter: ``velocity_with_derivs(tape, pts_world, t_frames)``
  returning (u, du/dx, du/dy, du/dz, du/dt), each an (B, 3) node.

``ModelDensityField`` / ``ModelVelocityField`` wrap a GrowingMlp with a
Domain; analytic test fields implement the same protocol with closed-form
derivatives.
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Tape
from .fields import GrowingMlp, radiance_from_raw
from .scenes import Domain, GridField, downsample_to, save_grid, load_grid

EPS_NORM = 1e-8


class OracleError(RuntimeError):
    """Velocity-prior oracle violated its grid contract."""


# ---------------------------------------------------------------------------
# model adapters: exact derivatives via forward-mode over the tape


def _dual_eval(model: GrowingMlp, tape: Tape, pts_unit: np.ndarray) -> Dual:
    """Forward pass carrying tangents along the four canonical axes."""
    dual_x = ad.seed_axes(tape, pts_unit, axes=(0, 1, 2, 3))
    return model.forward(dual_x, params=model.params(tape))


@dataclass
class ModelDensityField:
    model: GrowingMlp
    domain: Domain

    def sigma_with_derivs(self, tape: Tape, pts_world: np.ndarray, t_frames: np.ndarray):
        pts_unit = _unit_points(self.domain, pts_world, t_frames)
        raw = _dual_eval(self.model, tape, pts_unit)
        _, sigma = radiance_from_raw(raw)
        sx, sy, sz, st = sigma.t
        scale = self.domain.unit_scale()
        ft = self.domain.frame_dt
        flat = lambda n: ad.reshape(n, (len(pts_unit),))  # noqa: E731
        return (flat(sigma.p), flat(sx) * scale[0], flat(sy) * scale[1],
                flat(sz) * scale[2], flat(st) * ft)


@dataclass
class ModelVelocityField:
    model: GrowingMlp
    domain: Domain

    def velocity_with_derivs(self, tape: Tape, pts_world: np.ndarray, t_frames: np.ndarray):
        pts_unit = _unit_points(self.domain, pts_world, t_frames)
        u = _dual_eval(self.model, tape, pts_unit)
        scale = self.domain.unit_scale()
        ft = self.domain.frame_dt
        ux, uy, uz, ut = u.t
        return (u.p, ux * scale[0], uy * scale[1], uz * scale[2], ut * ft)

    def velocity(self, tape: Tape, pts_world: np.ndarray, t_frames: np.ndarray):
        pts_unit = _unit_points(self.domain, pts_world, t_frames)
        return self.model.forward(tape.wrap(pts_unit), tape=tape)


def _unit_points(domain: Domain, pts_world: np.ndarray, t_frames) -> np.ndarray:
    pts_world = np.atleast_2d(np.asarray(pts_world, dtype=np.float64))
    xyz = domain.to_unit(pts_world)
    t = np.asarray(t_frames, dtype=np.float64) * domain.frame_dt
    t = np.broadcast_to(np.atleast_1d(t), (len(xyz),))[:, None]
    return np.concatenate([xyz, t], axis=1)


# ---------------------------------------------------------------------------
# residuals


def _col(x):
    """(B,) -> (B, 1) for broadcasting against (B, 1) column slices."""
    if isinstance(x, ad.Node):
        return ad.reshape(x, (x.val.shape[0], 1)) if x.val.ndim == 1 else x
    x = np.asarray(x)
    return x[:, None] if x.ndim == 1 else x


def transport_from_derivs(sigma_derivs, u):
    """(dsigma/dt + u . grad sigma)^2 per point, density side detached:
    this term trains the velocity model only; applied to the density it
    would just shrink sigma (cross-time density supervision comes from
    warped rendering instead)."""
    _, sx, sy, sz, st = sigma_derivs
    sx, sy, sz, st = (ad.detach(v) for v in (sx, sy, sz, st))
    advect = (ad.cols(u, 0, 1) * _col(sx) + ad.cols(u, 1, 2) * _col(sy)
              + ad.cols(u, 2, 3) * _col(sz))
    resid = _col(st) + advect
    n = ad.value_of(u).shape[0]
    return ad.reshape(resid ** 2.0, (n,))


def nse_from_derivs(u_derivs, w_div: float):
    """Momentum and weighted divergence terms per point:
    ||du/dt + (u . grad) u||^2 and w_div (div u)^2."""
    u, ux, uy, uz, ut = u_derivs
    conv = []
    for c in range(3):
        conv.append(ad.cols(u, 0, 1) * ad.cols(ux, c, c + 1)
                    + ad.cols(u, 1, 2) * ad.cols(uy, c, c + 1)
                    + ad.cols(u, 2, 3) * ad.cols(uz, c, c + 1)
                    + ad.cols(ut, c, c + 1))
    momentum = conv[0] ** 2.0 + conv[1] ** 2.0 + conv[2] ** 2.0
    div = (ad.cols(ux, 0, 1) + ad.cols(uy, 1, 2) + ad.cols(uz, 2, 3))
    n = ad.value_of(u).shape[0]
    return (ad.reshape(momentum, (n,)), ad.reshape(div ** 2.0, (n,)) * float(w_div))


def transport_residual(density_field, velocity_field, tape: Tape,
                       pts_world: np.ndarray, t_frames):
    """Squared material derivative at the given world points / frame times."""
    derivs = density_field.sigma_with_derivs(tape, pts_world, t_frames)
    u = velocity_field.velocity(tape, pts_world, t_frames)
    return transport_from_derivs(derivs, u)


def nse_residual(velocity_field, tape: Tape, pts_world: np.ndarray, t_frames,
                 w_div: float):
    """momentum + w_div * divergence, summed per point (simplified
    momentum equation: pressure, viscosity, and body forces dropped)."""
    momentum, divterm = nse_terms(velocity_field, tape, pts_world, t_frames, w_div)
    return momentum + divterm


def nse_terms(velocity_field, tape: Tape, pts_world: np.ndarray, t_frames,
              w_div: float) -> tuple:
    return nse_from_derivs(
        velocity_field.velocity_with_derivs(tape, pts_world, t_frames), w_div)


def curl_divergence(velocity_field, tape: Tape, pts_world: np.ndarray, t_frames):
    """Exact curl (B, 3) and divergence (B,) of a velocity model."""
    u, ux, uy, uz, ut = velocity_field.velocity_with_derivs(tape, pts_world, t_frames)
    curl = ad.concat([
        ad.cols(uy, 2, 3) - ad.cols(uz, 1, 2),
        ad.cols(uz, 0, 1) - ad.cols(ux, 2, 3),
        ad.cols(ux, 1, 2) - ad.cols(uy, 0, 1),
    ], axis=1)
    n = len(np.atleast_2d(pts_world))
    div = ad.reshape(ad.cols(ux, 0, 1) + ad.cols(uy, 1, 2) + ad.cols(uz, 2, 3), (n,))
    return curl, div


# ---------------------------------------------------------------------------
# grid operators (2nd-order central differences, one-sided at boundaries)


def grid_gradient(field: GridField) -> np.ndarray:
    if min(field.dims) < 3:
        raise ValueError("grid operators need at least 3 cells per axis")
    from .scenes import _central_diff
    h = field.cell_size()
    return np.stack([_central_diff(field.data, a, h[a]) for a in range(3)], axis=-1)


def grid_divergence(vel: GridField) -> np.ndarray:
    if vel.channels != 3:
        raise ValueError("divergence needs a vector grid")
    if min(vel.dims) < 3:
        raise ValueError("grid operators need at least 3 cells per axis")
    from .scenes import _central_diff
    h = vel.cell_size()
    return sum(_central_diff(vel.data[..., a], a, h[a]) for a in range(3))


def grid_curl(vel: GridField) -> np.ndarray:
    if vel.channels != 3:
        raise ValueError("curl needs a vector grid")
    if min(vel.dims) < 3:
        raise ValueError("grid operators need at least 3 cells per axis")
    from .scenes import _central_diff
    h = vel.cell_size()
    d = lambda c, a: _central_diff(vel.data[..., c], a, h[a])  # noqa: E731
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)], axis=-1)


# ---------------------------------------------------------------------------
# velocity prior (normalized-curl supervision)


D2V_GRID = 32


def d2v_loss_from_curls(curl_model, curl_ref: np.ndarray, eps: float = EPS_NORM,
                        rms_normalize: bool = False):
    """Literal normalized-curl mismatch.

    Each curl field is divided by its mean squared curl magnitude (plus
    the eps floor) and the squared norm of the difference is summed over
    the grid.  As written the normalization is not scale invariant (a
    doubled field halves its normalized curl); ``rms_normalize`` divides
    by the root-mean-square magnitude instead, which is.
    """
    curl_ref = np.asarray(curl_ref, dtype=np.float64)
    ref_den = float(np.mean(np.sum(curl_ref ** 2, axis=-1)))
    if rms_normalize:
        ref_den = np.sqrt(ref_den)
    ref_hat = curl_ref / (ref_den + eps)
    if isinstance(curl_model, ad.Node):
        mag = ad.amean(ad.asum(curl_model * curl_model, axis=1))
        den = (ad.sqrt(mag) if rms_normalize else mag) + eps
        diff = curl_model / den - ref_hat.reshape(curl_model.val.shape)
        return ad.asum(diff * diff)
    mdl = np.asarray(curl_model, dtype=np.float64)
    den = float(np.mean(np.sum(mdl ** 2, axis=-1)))
    if rms_normalize:
        den = np.sqrt(den)
    diff = mdl / (den + eps) - ref_hat.reshape(mdl.shape)
    return float(np.sum(diff ** 2))


def check_oracle_output(density: GridField, velocity: GridField) -> None:
    if velocity.dims != density.dims or velocity.channels != 3:
        raise OracleError("oracle must return a vector grid with the input dims")


def d2v_loss_grids(u_hid: GridField, sigma_vis: GridField, oracle,
                   rms_normalize: bool = False) -> float:
    """Grid-level prior loss: central-difference curls on both sides."""
    if u_hid.dims != (D2V_GRID,) * 3 or sigma_vis.dims != (D2V_GRID,) * 3:
        raise ValueError(f"prior loss contract is {D2V_GRID}^3 grids")
    u_ref = oracle(sigma_vis)
    check_oracle_output(sigma_vis, u_ref)
    c_ref = grid_curl(u_ref).reshape(-1, 3)
    c_mdl = grid_curl(u_hid).reshape(-1, 3)
    return d2v_loss_from_curls(c_mdl, c_ref, rms_normalize=rms_normalize)


def d2v_loss_model(density_model: GrowingMlp, velocity_field: ModelVelocityField,
                   domain: Domain, oracle, tape: Tape, t_frame: float,
                   rms_normalize: bool = False):
    """Tape-integrated prior loss at one frame (small models/tests; the
    training loop uses :func:`apply_d2v_loss`, which bounds memory).

    The density grid is sampled from the radiance model (inference path)
    and handed to the oracle; the model curl is exact via the tape and
    stays parameter-differentiable.
    """
    c_ref, pts = _d2v_reference(density_model, domain, oracle, t_frame)
    curl, _ = curl_divergence(velocity_field, tape, pts, np.full(len(pts), t_frame))
    return d2v_loss_from_curls(curl, c_ref, rms_normalize=rms_normalize)


def _d2v_reference(density_model, domain: Domain, oracle, t_frame: float):
    grid = GridField(np.zeros((D2V_GRID,) * 3), domain.bounds)
    pts = grid.cell_centers().reshape(-1, 3)
    pts_unit = _unit_points(domain, pts, np.full(len(pts), t_frame))
    raw = density_model.forward(pts_unit)
    sigma = ad.value_of(radiance_from_raw(raw)[1])
    sigma_grid = GridField(sigma.reshape((D2V_GRID,) * 3), domain.bounds,
                           time=t_frame * domain.frame_dt)
    u_ref = oracle(sigma_grid)
    check_oracle_output(sigma_grid, u_ref)
    return grid_curl(u_ref).reshape(-1, 3), pts


def _model_curl_chunk(velocity_field, pts, t_frame, tape: Tape):
    """Curl via spatial tangents only (the time direction is not needed)."""
    dual_x = ad.seed_axes(tape, _unit_points(velocity_field.domain, pts,
                                             np.full(len(pts), t_frame)), axes=(0, 1, 2))
    u = velocity_field.model.forward(dual_x, params=velocity_field.model.params(tape))
    scale = velocity_field.domain.unit_scale()
    ux, uy, uz = (u.t[a] * scale[a] for a in range(3))
    curl = ad.concat([
        ad.cols(uy, 2, 3) - ad.cols(uz, 1, 2),
        ad.cols(uz, 0, 1) - ad.cols(ux, 2, 3),
        ad.cols(ux, 1, 2) - ad.cols(uy, 0, 1),
    ], axis=1)
    return curl


def apply_d2v_loss(density_model, velocity_field: ModelVelocityField, domain: Domain,
                   oracle, t_frame: float, weight: float,
                   rms_normalize: bool = False, chunk: int = 2048,
                   eps: float = EPS_NORM) -> float:
    """Memory-bounded prior loss: returns the loss value and accumulates
    weight * dLoss/dparams into the velocity store's gradient.

    Pass 1 evaluates the model curl chunk by chunk on throwaway tapes;
    the exact dLoss/dcurl coefficients (including the normalization
    denominator's dependence on the curl) are then formed in closed form,
    and pass 2 backpropagates sum(coeff * curl) per chunk, which yields
    the same parameter gradient as differentiating the loss on one tape.
    """
    c_ref, pts = _d2v_reference(density_model, domain, oracle, t_frame)
    n = len(pts)

    curls = np.empty((n, 3))
    for lo in range(0, n, chunk):
        tape = Tape()
        curls[lo:lo + chunk] = ad.value_of(
            _model_curl_chunk(velocity_field, pts[lo:lo + chunk], t_frame, tape))

    M = float(np.mean(np.sum(curls ** 2, axis=-1)))
    den = (np.sqrt(M) if rms_normalize else M) + eps
    ref_den = float(np.mean(np.sum(c_ref ** 2, axis=-1)))
    if rms_normalize:
        ref_den = np.sqrt(ref_den)
    r_hat = c_ref / (ref_den + eps)
    c_hat = curls / den
    diff = c_hat - r_hat
    loss = float(np.sum(diff ** 2))

    # dL/dc = 2 diff/den + dL/dden * dden/dc
    s = float(np.sum(diff * curls))
    if rms_normalize:
        dden_scale = 1.0 / (max(np.sqrt(M), 1e-300) * n)
    else:
        dden_scale = 2.0 / n
    coeff = 2.0 * diff / den - (2.0 * s / den ** 2) * dden_scale * curls
    coeff *= weight

    for lo in range(0, n, chunk):
        tape = Tape()
        curl = _model_curl_chunk(velocity_field, pts[lo:lo + chunk], t_frame, tape)
        tape.backward(ad.asum(curl * coeff[lo:lo + chunk]))
    return loss


class GroundTruthVelocityOracle:
    """Density-to-velocity prior backed by the dataset's ground truth.

    Picks the ground-truth velocity frame whose timestamp is nearest the
    input grid's ``time`` metadata and resamples it to the input dims.
    Stands in for an external learned prior behind the same interface.
    """

    def __init__(self, gt_velocity: list):
        if not gt_velocity:
            raise ValueError("no ground-truth velocity frames")
        self.frames = gt_velocity

    def __call__(self, density: GridField) -> GridField:
        t = density.time if density.time is not None else 0.0
        times = [g.time if g.time is not None else i / max(len(self.frames) - 1, 1)
                 for i, g in enumerate(self.frames)]
        k = int(np.argmin(np.abs(np.asarray(times) - t)))
        return downsample_to(self.frames[k], density.dims)


class SubprocessVelocityOracle:
    """File-convention plug-in boundary for an external prior model.

    Writes the density grid to a file, invokes ``command density_path
    velocity_path``, and reads back the velocity grid.
    """

    def __init__(self, command: list[str]):
        self.command = list(command)

    def __call__(self, density: GridField) -> GridField:
        with tempfile.TemporaryDirectory() as tmp:
            din = Path(tmp) / "density.nfg"
            dout = Path(tmp) / "velocity.nfg"
            save_grid(din, density)
            proc = subprocess.run(self.command + [str(din), str(dout)],
                                  capture_output=True, text=True)
            if proc.returncode != 0:
                raise OracleError(f"oracle command failed: {proc.stderr.strip()}")
            if not dout.exists():
                raise OracleError("oracle produced no velocity grid")
            out = load_grid(dout)
        out.time = density.time
        return out


# ---------------------------------------------------------------------------
# overlay loss


def overlay_loss(sigma_static, sigma_fluid, eps: float = EPS_NORM):
    """Intersection penalty s_a s_b / (s_a^2 + s_b^2 + eps) in [0, 0.5];
    symmetric, zero when either density vanishes."""
    num = sigma_static * sigma_fluid
    den = sigma_static * sigma_static + sigma_fluid * sigma_fluid + eps
    return num / den
