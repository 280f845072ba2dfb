"""Dilated causal convolutional network for next-pose prediction.

Stack: input dropout -> two kernel-1 encoder convs (ReLU) -> a chain of
gated residual blocks -> skip-sum decoder. Each block runs two causal
convolutions (filter and gate paths); active control signals pass
through per-path kernel-1 convs with ReLU and are fused by summation
before the tanh/sigmoid gate. Off controls contribute exactly zero.

The single decoder output packs, per frame:
    [mean | log_std | foot logits (2) | direction (12) | velocity (1)]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

FOOT_DIM = 2
DIR_DIM = 12
VEL_DIM = 1


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class CCNetConfig:
    d_motion: int
    residual_channels: int = 32
    skip_channels: int = 512
    n_blocks: int = 20
    kernel: int = 2
    dilations: tuple = ()
    dropout_p: float = 0.5
    skeleton_dim: int = 82
    direction_dim: int = 13  # 12 direction components + 1 velocity
    type_dim: int = 10
    precision: str = "float64"

    def __post_init__(self):
        if self.d_motion < 1 or self.n_blocks < 1 or self.kernel < 1:
            raise NetworkError("invalid dimensions")
        if not self.dilations:
            object.__setattr__(self, "dilations", (2,) * self.n_blocks)
        else:
            object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if len(self.dilations) != self.n_blocks:
            raise NetworkError("need one dilation per block")
        if any(d < 1 for d in self.dilations):
            raise NetworkError("dilations must be >= 1")
        if self.precision != "float64":
            raise NetworkError("only float64 is supported")

    @property
    def input_width(self) -> int:
        # full representation vector: continuous dims plus 2 contact flags
        return self.d_motion + FOOT_DIM

    @property
    def output_width(self) -> int:
        return 2 * self.d_motion + FOOT_DIM + DIR_DIM + VEL_DIM

    def to_dict(self) -> dict:
        return {
            "d_motion": self.d_motion,
            "residual_channels": self.residual_channels,
            "skip_channels": self.skip_channels,
            "n_blocks": self.n_blocks,
            "kernel": self.kernel,
            "dilations": list(self.dilations),
            "dropout_p": self.dropout_p,
            "skeleton_dim": self.skeleton_dim,
            "direction_dim": self.direction_dim,
            "type_dim": self.type_dim,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CCNetConfig":
        return cls(d_motion=int(d["d_motion"]),
                   residual_channels=int(d["residual_channels"]),
                   skip_channels=int(d["skip_channels"]),
                   n_blocks=int(d["n_blocks"]),
                   kernel=int(d["kernel"]),
                   dilations=tuple(d["dilations"]),
                   dropout_p=float(d["dropout_p"]),
                   skeleton_dim=int(d["skeleton_dim"]),
                   direction_dim=int(d["direction_dim"]),
                   type_dim=int(d["type_dim"]),
                   precision=d.get("precision", "float64"))


def receptive_field(config: CCNetConfig) -> int:
    k = config.kernel
    return (k - 1) + sum((k - 1) * d for d in config.dilations)


def _conv_shapes(config: CCNetConfig):
    """(name, (C_out, C_in, K)) for every convolution in the net."""
    rc, sc = config.residual_channels, config.skip_channels
    shapes = [("enc1", (rc, config.input_width, 1)), ("enc2", (rc, rc, 1))]
    for i in range(config.n_blocks):
        b = f"block{i}"
        shapes += [
            (f"{b}.filter", (rc, rc, config.kernel)),
            (f"{b}.gate", (rc, rc, config.kernel)),
            (f"{b}.skel_f", (rc, config.skeleton_dim, 1)),
            (f"{b}.skel_g", (rc, config.skeleton_dim, 1)),
            (f"{b}.dir_f", (rc, config.direction_dim, 1)),
            (f"{b}.dir_g", (rc, config.direction_dim, 1)),
            (f"{b}.type_f", (rc, config.type_dim, 1)),
            (f"{b}.type_g", (rc, config.type_dim, 1)),
            (f"{b}.res", (rc, rc, 1)),
            (f"{b}.skip", (sc, rc, 1)),
        ]
    shapes += [("dec1", (sc, sc, 1)), ("dec2", (config.output_width, sc, 1))]
    return shapes


def init(config: CCNetConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases; deterministic."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (co, ci, k) in _conv_shapes(config):
        bound = np.sqrt(1.0 / (ci * k))
        params[name + ".w"] = rng.uniform(-bound, bound, size=(co, ci, k))
        params[name + ".b"] = np.zeros(co)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


@dataclass
class ControlBundle:
    """Per-sequence conditioning inputs with on/off switching.

    skeleton: (B, 82). direction: (B, 13, T) — 12 direction components
    with the velocity scalar appended. mtype: (B, 10, T). The per-signal
    masks are {0,1} per sequence; a zero row removes that signal's
    contribution (and its gradients) exactly. dir_on/type_on gate the
    signal for the whole bundle.
    """

    skeleton: np.ndarray
    direction: np.ndarray | None = None
    mtype: np.ndarray | None = None
    dir_on: bool = False
    type_on: bool = False
    dir_mask: np.ndarray | None = None   # (B,) of {0,1}
    type_mask: np.ndarray | None = None

    def validate(self, config: CCNetConfig, batch: int, T: int):
        if self.skeleton.shape != (batch, config.skeleton_dim):
            raise NetworkError(
                f"skeleton control shape {self.skeleton.shape} != "
                f"{(batch, config.skeleton_dim)}")
        if self.dir_on:
            want = (batch, config.direction_dim, T)
            if self.direction is None or self.direction.shape != want:
                raise NetworkError(f"direction control must have shape {want}")
        if self.type_on:
            want = (batch, config.type_dim, T)
            if self.mtype is None or self.mtype.shape != want:
                raise NetworkError(f"type control must have shape {want}")


@dataclass
class Forward:
    """Network output plus the Vars needed to run a backward pass."""

    out: Var                       # (B, D_out, T)
    param_vars: dict[str, Var] = field(default_factory=dict)


def _p(tape, params, cache, name):
    if name not in cache:
        cache[name] = Var(params[name], tape=tape)
    return cache[name]


def _mask_var(mask, batch, ch, T):
    m = np.ones(batch) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != (batch,):
        raise NetworkError(f"control mask must have shape ({batch},)")
    return ad.constant(np.broadcast_to(m[:, None, None], (batch, ch, T)).copy())


def forward(params: dict[str, np.ndarray], x: np.ndarray,
            controls: ControlBundle, config: CCNetConfig, *,
            train_mode: bool = False, rng=None, tape: Tape | None = None) -> Forward:
    """Run the network over a (B, d_motion+2, T) input sequence.

    With a tape, all parameters become differentiable Vars (returned in
    param_vars). Without one, this is a pure inference pass: no rng is
    consumed and repeated calls are bit-identical.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != config.input_width:
        raise NetworkError(
            f"input must be (B, {config.input_width}, T), got {x.shape}")
    batch, _, T = x.shape
    if T < 1:
        raise NetworkError("need at least one frame")
    controls.validate(config, batch, T)

    cache: dict[str, Var] = {}
    h = ad.constant(x)
    if train_mode:
        if rng is None:
            raise NetworkError("train_mode needs an rng for dropout")
        mask = ad.dropout_mask(x.shape, config.dropout_p, rng)
        h = ad.mul(h, ad.constant(mask))

    def conv(name, v, dilation=1):
        return ad.conv1d(v, _p(tape, params, cache, name + ".w"),
                         _p(tape, params, cache, name + ".b"),
                         dilation=dilation, causal=True)

    h = ad.relu(conv("enc1", h))
    h = ad.relu(conv("enc2", h))

    rc = config.residual_channels
    skel = np.broadcast_to(controls.skeleton[:, :, None],
                           (batch, config.skeleton_dim, T)).copy()
    skel_v = ad.constant(skel)
    cond_inputs = [("skel", skel_v, None)]
    if controls.dir_on:
        cond_inputs.append(("dir", ad.constant(controls.direction),
                            controls.dir_mask))
    if controls.type_on:
        cond_inputs.append(("type", ad.constant(controls.mtype),
                            controls.type_mask))

    skip_total = None
    for i, d in enumerate(config.dilations):
        b = f"block{i}"
        f = conv(f"{b}.filter", h, dilation=d)
        g = conv(f"{b}.gate", h, dilation=d)
        for cname, cvar, cmask in cond_inputs:
            fc = ad.relu(conv(f"{b}.{cname}_f", cvar))
            gc = ad.relu(conv(f"{b}.{cname}_g", cvar))
            if cmask is not None:
                mv = _mask_var(cmask, batch, rc, T)
                fc = ad.mul(fc, mv)
                gc = ad.mul(gc, mv)
            f = ad.add(f, fc)
            g = ad.add(g, gc)
        z = ad.gated_activation(f, g)
        h = ad.add(h, conv(f"{b}.res", z))
        s = conv(f"{b}.skip", z)
        skip_total = s if skip_total is None else ad.add(skip_total, s)

    y = ad.relu(skip_total)
    y = ad.relu(conv("dec1", y))
    out = conv("dec2", y)
    return Forward(out=out, param_vars=cache)


@dataclass
class OutputSlices:
    mean: Var
    log_std: Var
    foot: Var
    direction: Var
    velocity: Var


def split_output(out: Var, config: CCNetConfig) -> OutputSlices:
    """Slice the packed decoder output along the channel axis."""
    dm = config.d_motion
    offs = [0, dm, 2 * dm, 2 * dm + FOOT_DIM, 2 * dm + FOOT_DIM + DIR_DIM]
    widths = [dm, dm, FOOT_DIM, DIR_DIM, VEL_DIM]
    parts = [ad.narrow(out, 1, o, w) for o, w in zip(offs, widths)]
    return OutputSlices(*parts)


class IncrementalNet:
    """Frame-at-a-time inference equivalent to the full forward pass.

    Each block keeps a ring buffer of its last `dilation` input vectors,
    so one step costs a handful of matrix-vector products. Buffers start
    at zero, matching the causal left zero-padding of the batch path.
    """

    def __init__(self, params: dict[str, np.ndarray], config: CCNetConfig):
        if config.kernel != 2:
            raise NetworkError("incremental stepping assumes kernel 2")
        self.params = params
        self.config = config
        self.t = 0
        self._rings = [np.zeros((d, config.residual_channels))
                       for d in config.dilations]

    def reset(self):
        self.t = 0
        for r in self._rings:
            r[:] = 0.0

    def step(self, x_t: np.ndarray, skeleton: np.ndarray,
             direction: np.ndarray | None = None,
             mtype: np.ndarray | None = None) -> np.ndarray:
        """Advance one frame; returns the packed (D_out,) output vector."""
        p = self.params
        cfg = self.config
        if x_t.shape != (cfg.input_width,):
            raise NetworkError(f"frame must have shape ({cfg.input_width},)")

        def k1(name, v):
            return p[name + ".w"][:, :, 0] @ v + p[name + ".b"]

        h = np.maximum(k1("enc1", x_t), 0.0)
        h = np.maximum(k1("enc2", h), 0.0)

        conds = [("skel", skeleton)]
        if direction is not None:
            conds.append(("dir", direction))
        if mtype is not None:
            conds.append(("type", mtype))

        skip = np.zeros(cfg.skip_channels)
        for i, d in enumerate(cfg.dilations):
            b = f"block{i}"
            ring = self._rings[i]
            slot = self.t % d
            past = ring[slot].copy()  # block input from d frames ago
            ring[slot] = h
            wf, wg = p[f"{b}.filter.w"], p[f"{b}.gate.w"]
            f = wf[:, :, 0] @ past + wf[:, :, 1] @ h + p[f"{b}.filter.b"]
            g = wg[:, :, 0] @ past + wg[:, :, 1] @ h + p[f"{b}.gate.b"]
            for cname, cvec in conds:
                f = f + np.maximum(k1(f"{b}.{cname}_f", cvec), 0.0)
                g = g + np.maximum(k1(f"{b}.{cname}_g", cvec), 0.0)
            z = np.tanh(f) * (1.0 / (1.0 + np.exp(-g)))
            h = h + k1(f"{b}.res", z)
            skip += k1(f"{b}.skip", z)

        y = np.maximum(skip, 0.0)
        y = np.maximum(k1("dec1", y), 0.0)
        out = k1("dec2", y)
        self.t += 1
        return out
