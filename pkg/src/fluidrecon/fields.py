"""Sinusoidal MLP field models.

Two field roles share one backbone: a radiance field mapping (x,y,z,t) to
(color, density) and a velocity field mapping (x,y,z,t) to a 3-vector.
Inputs are normalized coordinates: positions in [-1,1]^3, time in [0,1].

The backbone grows layer by layer during training: the output head reads a
weighted sum of hidden activations, out = Head(sum_m w_m h_m), where the
hat-shaped weights w_m slide from the early layers to the last one as
training progresses.  Layer 0 always stays in the forward path but never
routes to the head directly (w_0 = 0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Node, ParamStore, Tape

OMEGA_DEFAULT = 30.0
CHECKPOINT_MAGIC = b"PINF-CKPT1"


def growth_weights(s: float, S: float, n_layers: int) -> np.ndarray:
    """Per-hidden-layer routing weights for growth step s of S.

    w_m = clamp(1 + m_a - m, 0, 1) * clamp(1 + m - m_a, 0, 1) with the
    active-layer position m_a = 1 + (n_layers - 2) * s / S clamped to
    [1, n_layers - 1].  The weights are a unit-mass hat centered at m_a,
    so they always sum to 1; w_0 = 0; for s >= S all mass sits on the
    last layer.
    """
    if n_layers < 2:
        raise ValueError("need at least 2 hidden layers")
    if S <= 0:
        raise ValueError("growth span S must be positive")
    if s < 0:
        raise ValueError("step s must be nonnegative")
    m_a = 1.0 + (n_layers - 2.0) * float(s) / float(S)
    m_a = min(m_a, float(n_layers - 1))
    m = np.arange(n_layers, dtype=np.float64)
    return np.clip(1.0 + m_a - m, 0.0, 1.0) * np.clip(1.0 + m - m_a, 0.0, 1.0)


@dataclass
class SirenLayer:
    """Shape/frequency record for one sin(omega * (W x + b)) layer."""

    in_dim: int
    out_dim: int
    omega: float

    def w_name(self, i: int) -> str:
        return f"layer{i}/W"

    def b_name(self, i: int) -> str:
        return f"layer{i}/b"


@dataclass
class RadianceOut:
    """Color in (0,1) per channel and nonnegative optical density."""

    color: np.ndarray
    sigma: np.ndarray


@dataclass
class VelocityOut:
    velocity: np.ndarray


class GrowingMlp:
    """Equal-width sinusoidal MLP with a progressive growth schedule.

    ``n_hidden`` hidden layers of width ``hidden`` feed an affine output
    head through the growth-weighted sum.  ``current_step`` /
    ``grow_total_steps`` drive the schedule; ``grow_total_steps = 0``
    disables growing (head reads the last hidden layer).
    """

    def __init__(self, in_dim: int, hidden: int = 64, n_hidden: int = 5,
                 out_dim: int = 4, omega: float = OMEGA_DEFAULT,
                 grow_total_steps: int = 0):
        if n_hidden < 2:
            raise ValueError("n_hidden must be >= 2")
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.out_dim = out_dim
        self.grow_total_steps = int(grow_total_steps)
        self.current_step = 0
        self.layers = [SirenLayer(in_dim if m == 0 else hidden, hidden, omega)
                       for m in range(n_hidden)]
        self.store = ParamStore()
        for m, layer in enumerate(self.layers):
            self.store.register(layer.w_name(m), (layer.in_dim, layer.out_dim))
            self.store.register(layer.b_name(m), (layer.out_dim,))
        self.store.register("head/W", (hidden, out_dim))
        self.store.register("head/b", (out_dim,))

    # ------------------------------------------------------------------
    def init_siren(self, seed: int) -> None:
        """SIREN initialization: first layer U(-1/in, 1/in), deeper layers
        U(-sqrt(6/in)/omega, sqrt(6/in)/omega); biases zero."""
        rng = np.random.default_rng(seed)
        for m, layer in enumerate(self.layers):
            if m == 0:
                bound = 1.0 / layer.in_dim
            else:
                bound = np.sqrt(6.0 / layer.in_dim) / layer.omega
            self.store.view(layer.w_name(m))[:] = rng.uniform(
                -bound, bound, (layer.in_dim, layer.out_dim))
            self.store.view(layer.b_name(m))[:] = 0.0
        bound = np.sqrt(6.0 / self.hidden) / OMEGA_DEFAULT
        self.store.view("head/W")[:] = rng.uniform(-bound, bound, (self.hidden, self.out_dim))
        self.store.view("head/b")[:] = 0.0

    def growth_weights(self) -> np.ndarray:
        if self.grow_total_steps <= 0:
            w = np.zeros(self.n_hidden)
            w[-1] = 1.0
            return w
        return growth_weights(self.current_step, self.grow_total_steps, self.n_hidden)

    # ------------------------------------------------------------------
    def params(self, tape: Tape | None):
        """Parameter handles: tape leaves when a tape is given, ndarray
        views otherwise (fast inference path)."""
        if tape is None:
            get = self.store.view
        else:
            get = lambda name: tape.param(self.store, name)  # noqa: E731
        per_layer = [(get(l.w_name(m)), get(l.b_name(m)))
                     for m, l in enumerate(self.layers)]
        return per_layer, (get("head/W"), get("head/b"))

    def forward(self, x, tape: Tape | None = None, grown: bool = True, params=None):
        """Raw head output for inputs ``x`` of shape (B, in_dim).

        ``x`` may be an ndarray, Node, or Dual; the result has the same
        flavor.  With ``grown`` the head reads the growth-weighted sum of
        hidden activations, otherwise the last hidden layer alone.
        """
        _check_finite_input(x)
        per_layer, (hw, hb) = params if params is not None else self.params(tape)
        h = x
        acts = []
        for (w, b), layer in zip(per_layer, self.layers):
            h = ad.sin(ad.affine(h, w, b, layer.omega))
            acts.append(h)
        if grown:
            weights = self.growth_weights()
            mix = None
            for wm, hm in zip(weights, acts):
                if wm == 0.0:
                    continue
                term = hm if wm == 1.0 else hm * wm
                mix = term if mix is None else mix + term
            if mix is None:  # all mass clamped away; cannot happen for s>=0
                mix = acts[-1]
        else:
            mix = acts[-1]
        return ad.affine(mix, hw, hb)


def _check_finite_input(x) -> None:
    v = ad.value_of(x)
    if not np.all(np.isfinite(v)):
        raise ValueError("field input contains non-finite coordinates")


# ---------------------------------------------------------------------------
# field roles


def radiance_from_raw(raw):
    """Map raw head output (B, 4) to color (logistic) and density (softplus)."""
    color = ad.logistic(ad.cols(raw, 0, 3))
    sigma = ad.softplus(ad.cols(raw, 3, 4))
    return color, sigma


def eval_radiance(model: GrowingMlp, x, grown: bool = True) -> RadianceOut:
    """Inference-path radiance evaluation; accepts (4,) or (B, 4)."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    raw = model.forward(np.atleast_2d(pts), grown=grown)
    color, sigma = radiance_from_raw(raw)
    if single:
        return RadianceOut(color[0], sigma[0, 0])
    return RadianceOut(color, sigma[:, 0])


def eval_velocity(model: GrowingMlp, x, grown: bool = True) -> VelocityOut:
    """Inference-path velocity evaluation: raw affine head, no squashing."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    raw = model.forward(np.atleast_2d(pts), grown=grown)
    return VelocityOut(raw[0] if single else raw)


class HybridVisModel:
    """Static radiance field over (x,y,z) paired with a time-varying fluid
    radiance field over (x,y,z,t); the sub-models share no parameters."""

    def __init__(self, static_model: GrowingMlp, fluid_model: GrowingMlp,
                 static_warmup_steps: int):
        if static_model.in_dim != 3 or fluid_model.in_dim != 4:
            raise ValueError("static model takes (x,y,z); fluid model takes (x,y,z,t)")
        self.static_model = static_model
        self.fluid_model = fluid_model
        self.static_warmup_steps = int(static_warmup_steps)


# ---------------------------------------------------------------------------
# checkpoint format: magic "PINF-CKPT1", then growth state, layer shape
# table, and row-major float64 parameters, all little-endian


def save_checkpoint(model: GrowingMlp, path) -> None:
    records = [(l.in_dim, l.out_dim, l.omega) for l in model.layers]
    records.append((model.hidden, model.out_dim, 0.0))  # head, no activation
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQQ", len(records),
                             model.current_step, model.grow_total_steps))
        for in_dim, out_dim, omega in records:
            fh.write(struct.pack("<IId", in_dim, out_dim, omega))
        fh.write(model.store.values.astype("<f8").tobytes())


def load_checkpoint(path) -> GrowingMlp:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        n_rec, step, total = struct.unpack("<IQQ", fh.read(4 + 8 + 8))
        records = [struct.unpack("<IId", fh.read(4 + 4 + 8)) for _ in range(n_rec)]
        body = fh.read()
    hidden_records = records[:-1]
    head = records[-1]
    model = GrowingMlp(in_dim=hidden_records[0][0], hidden=hidden_records[0][1],
                       n_hidden=len(hidden_records), out_dim=head[1],
                       omega=hidden_records[0][2], grow_total_steps=total)
    model.current_step = step
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != model.store.size:
        raise ValueError("checkpoint parameter count mismatch")
    model.store.values[:] = flat
    return model
