"""Tiny video transformer denoiser with layer-skip hooks.

Every pixel of a ``[frames, channels, height, width]`` clip is one token. A
block is pre-norm and residual throughout:

    factorized:  z += SpatialAttn(LN(z)); z += TemporalAttn(LN(z)); z += MLP(LN(z))
    joint:       z += Attn3D(LN(z));                                 z += MLP(LN(z))

Spatial attention mixes the h*w tokens of one frame, temporal attention the f
tokens at one pixel location, joint attention all f*h*w tokens. Fixed
sinusoidal position and timestep codes and a learned class embedding (with a
null row for the unconditional branch) are added to the in-projection.

The unperturbed forward keeps a cache so ``backward`` can return exact
reverse-mode gradients; perturbed forwards (the implicit weak models) are
inference only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import LN_EPS, RngStream, gaussian, split

__all__ = [
    "NetError",
    "Arch",
    "PerturbationConfig",
    "TransformerDenoiser",
    "param_specs",
    "init_model",
    "forward",
    "forward_with_cache",
    "backward",
    "GELU_C",
]

GELU_C = np.sqrt(2.0 / np.pi)


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class Arch:
    layers: int = 4
    dim: int = 16
    heads: int = 1
    attention_mode: str = "factorized"
    frames: int = 8
    height: int = 8
    width: int = 8
    channels: int = 1
    n_classes: int = 4
    mlp_hidden: int = 32

    def __post_init__(self):
        if self.attention_mode not in ("factorized", "joint"):
            raise NetError(f"attention_mode must be factorized or joint, got {self.attention_mode!r}")
        if self.heads != 1:
            raise NetError("only single-head attention is supported")
        for name in ("layers", "dim", "frames", "height", "width", "channels", "n_classes", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise NetError(f"arch.{name} must be >= 1")

    @property
    def axes(self) -> tuple[str, ...]:
        return ("spatial", "temporal") if self.attention_mode == "factorized" else ("joint",)

    @property
    def video_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)


@dataclass(frozen=True)
class PerturbationConfig:
    """Which layers of the forward pass to degrade, and how.

    ``mode``: ``none``, ``residual_skip``, ``attention_skip`` or ``attention_blur``.
    For ``residual_skip`` an ``axis`` of ``None`` skips the whole block; an axis
    skips only that attention sub-block. Attention modes require an axis.
    ``blur_sigma`` of ``None`` means the full row width.
    """
    mode: str = "none"
    layers: tuple[int, ...] = ()
    axis: str | None = None
    blur_sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(l) for l in self.layers))
        if self.mode not in ("none", "residual_skip", "attention_skip", "attention_blur"):
            raise NetError(f"unknown perturbation mode {self.mode!r}")
        if self.axis not in (None, "spatial", "temporal", "joint"):
            raise NetError(f"unknown perturbation axis {self.axis!r}")
        if self.mode.startswith("attention") and self.axis is None:
            raise NetError(f"{self.mode} needs an axis")
        if self.blur_sigma is not None and self.blur_sigma <= 0:
            raise NetError("blur_sigma must be positive")

    @property
    def active(self) -> bool:
        return self.mode != "none" and len(self.layers) > 0

    def validate(self, arch: Arch) -> None:
        for l in self.layers:
            if not 0 <= l < arch.layers:
                raise NetError(f"perturbation layer {l} out of range [0, {arch.layers})")
        if self.axis is not None and self.axis not in arch.axes:
            raise NetError(f"axis {self.axis!r} invalid for attention_mode={arch.attention_mode!r}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "layers": list(self.layers), "axis": self.axis,
                "blur_sigma": self.blur_sigma}


NO_PERTURB = PerturbationConfig()


def param_specs(arch: Arch) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; this order is also the checkpoint order."""
    d, c, hdim = arch.dim, arch.channels, arch.mlp_hidden
    specs = [("embed.W_in", (c, d)), ("embed.b_in", (d,)), ("embed.class", (arch.n_classes + 1, d))]
    for l in range(arch.layers):
        for ax in arch.axes:
            p = f"layer{l}.{ax}"
            specs += [(f"{p}.ln_g", (d,)), (f"{p}.ln_b", (d,)),
                      (f"{p}.W_Q", (d, d)), (f"{p}.W_K", (d, d)), (f"{p}.W_V", (d, d)), (f"{p}.W_O", (d, d))]
        p = f"layer{l}.mlp"
        specs += [(f"{p}.ln_g", (d,)), (f"{p}.ln_b", (d,)),
                  (f"{p}.W1", (d, hdim)), (f"{p}.b1", (hdim,)), (f"{p}.W2", (hdim, d)), (f"{p}.b2", (d,))]
    specs += [("head.W_out", (d, c)), ("head.b_out", (c,))]
    return specs


@dataclass(eq=False)
class TransformerDenoiser:
    arch: Arch
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, shape in param_specs(self.arch):
            if name not in self.params:
                raise NetError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise NetError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> TransformerDenoiser:
        return TransformerDenoiser(self.arch, {k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(arch: Arch, rng: RngStream) -> TransformerDenoiser:
    """Scaled-normal initialisation; layer-norm gains 1, biases 0."""
    params = {}
    for i, (name, shape) in enumerate(param_specs(arch)):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "ln_g":
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf == "ln_b":
            params[name] = np.zeros(shape)
        else:
            z, _ = gaussian(split(rng, i), shape)
            fan_in = shape[0] if name != "embed.class" else arch.dim
            scale = 1.0 / np.sqrt(fan_in)
            if name == "head.W_out" or leaf in ("W_O", "W2"):
                scale *= 0.5 / np.sqrt(arch.layers)
            params[name] = z * scale
    return TransformerDenoiser(arch, params)


# -- fixed codes -----------------------------------------------------------

def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal code of integer steps ``t`` (shape (B,)) -> (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def position_embedding(arch: Arch) -> np.ndarray:
    """Periodic sin/cos codes of (frame, row, col), shape (f, h, w, d)."""
    feats = []
    for axis, n in enumerate((arch.frames, arch.height, arch.width)):
        p = np.arange(n, dtype=np.float64)
        for k in (1, 2):
            for fn in (np.sin, np.cos):
                v = fn(2.0 * np.pi * k * p / n)
                shape = [1, 1, 1]
                shape[axis] = n
                feats.append(np.broadcast_to(v.reshape(shape), (arch.frames, arch.height, arch.width)))
    emb = np.stack(feats, axis=-1)
    if emb.shape[-1] >= arch.dim:
        return np.ascontiguousarray(emb[..., :arch.dim])
    pad = np.zeros((*emb.shape[:-1], arch.dim - emb.shape[-1]))
    return np.concatenate([emb, pad], axis=-1)


def _blur_kernel(n: int, sigma: float) -> np.ndarray:
    idx = np.arange(n, dtype=np.float64)
    g = np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / sigma) ** 2)
    return g / g.sum(axis=1, keepdims=True)


# -- primitive layers with backward ---------------------------------------

def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    inner = GELU_C * (u + 0.044715 * u * u * u)
    th = np.tanh(inner)
    return 0.5 * u * (1.0 + th), th


def _gelu_grad(u, th):
    dinner = GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * dinner


def _wsum(a, b):
    """Sum over all leading axes of a[..., i]^T b[..., j] -> (i, j)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _attention(y, P, prefix, mode=None, blur_sigma=None, identity_matrix=False):
    """Single-head attention over groups: y is (G, N, d)."""
    d = y.shape[-1]
    V = y @ P[f"{prefix}.W_V"]
    if mode == "attention_skip":
        if identity_matrix:
            O = np.eye(y.shape[1]) @ V
        else:
            O = V
        return O @ P[f"{prefix}.W_O"], None
    Q = y @ P[f"{prefix}.W_Q"]
    K = y @ P[f"{prefix}.W_K"]
    S = Q @ K.swapaxes(-1, -2) / np.sqrt(d)
    S = S - S.max(axis=-1, keepdims=True)
    E = np.exp(S)
    A = E / E.sum(axis=-1, keepdims=True)
    if mode == "attention_blur":
        n = y.shape[1]
        A = A @ _blur_kernel(n, float(n) if blur_sigma is None else blur_sigma)
    O = A @ V
    return O @ P[f"{prefix}.W_O"], (y, Q, K, V, A, O)


def _attention_bwd(dout, cache, P, prefix, grads):
    y, Q, K, V, A, O = cache
    d = y.shape[-1]
    grads[f"{prefix}.W_O"] = _wsum(O, dout)
    dO = dout @ P[f"{prefix}.W_O"].T
    dA = dO @ V.swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dO
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / np.sqrt(d)
    dQ = dS @ K
    dK = dS.swapaxes(-1, -2) @ Q
    grads[f"{prefix}.W_Q"] = _wsum(y, dQ)
    grads[f"{prefix}.W_K"] = _wsum(y, dK)
    grads[f"{prefix}.W_V"] = _wsum(y, dV)
    return dQ @ P[f"{prefix}.W_Q"].T + dK @ P[f"{prefix}.W_K"].T + dV @ P[f"{prefix}.W_V"].T


# -- token regrouping ------------------------------------------------------

def _group(z, axis):
    B, F, H, W, d = z.shape
    if axis == "spatial":
        return z.reshape(B * F, H * W, d)
    if axis == "temporal":
        return z.transpose(0, 2, 3, 1, 4).reshape(B * H * W, F, d)
    return z.reshape(B, F * H * W, d)


def _ungroup(g, axis, shape):
    B, F, H, W, d = shape
    if axis == "spatial" or axis == "joint":
        return g.reshape(shape)
    return g.reshape(B, H, W, F, d).transpose(0, 3, 1, 2, 4)


# -- forward / backward ----------------------------------------------------

def _as_batch(model, x_t, t, class_id):
    arch = model.arch
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 4
    if single:
        x = x[None]
    if x.shape[1:] != arch.video_shape:
        raise NetError(f"x_t shape {x.shape[1:]} does not match token grid {arch.video_shape}")
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    if class_id is None:
        cls = np.full(B, arch.n_classes, dtype=np.int64)
    else:
        cls = np.array([arch.n_classes if c is None else c
                        for c in np.broadcast_to(np.asarray(class_id, dtype=object), (B,))], dtype=np.int64)
    if np.any(cls < 0) or np.any(cls > arch.n_classes):
        raise NetError(f"class ids must lie in [0, {arch.n_classes}] (n_classes = null token)")
    return x, t, cls, single


def _run(model, x, t, cls, perturb, keep_cache, identity_matrix=False, activations=None):
    arch, P = model.arch, model.params
    B = x.shape[0]
    tokens = x.transpose(0, 1, 3, 4, 2)                       # (B, F, H, W, C)
    z = tokens @ P["embed.W_in"] + P["embed.b_in"]
    z = z + position_embedding(arch)[None]
    z = z + (timestep_embedding(t, arch.dim) + P["embed.class"][cls])[:, None, None, None, :]
    cache = {"tokens": tokens, "cls": cls, "blocks": []}
    skip_layers = set(perturb.layers) if perturb.active else set()
    for l in range(arch.layers):
        if activations is not None:
            activations.append(z.copy())
        pert_here = l in skip_layers
        if pert_here and perturb.mode == "residual_skip" and perturb.axis is None:
            cache["blocks"].append(None)
            continue
        bcache = {}
        for ax in arch.axes:
            prefix = f"layer{l}.{ax}"
            on_axis = pert_here and perturb.axis == ax
            if on_axis and perturb.mode == "residual_skip":
                continue
            y, lnc = _ln_fwd(z, P[f"{prefix}.ln_g"], P[f"{prefix}.ln_b"])
            mode = perturb.mode if on_axis else None
            a, ac = _attention(_group(y, ax), P, prefix, mode, perturb.blur_sigma, identity_matrix)
            z = z + _ungroup(a, ax, z.shape)
            if keep_cache:
                bcache[ax] = (lnc, ac)
        prefix = f"layer{l}.mlp"
        y, lnc = _ln_fwd(z, P[f"{prefix}.ln_g"], P[f"{prefix}.ln_b"])
        u = y @ P[f"{prefix}.W1"] + P[f"{prefix}.b1"]
        gu, th = _gelu(u)
        z = z + gu @ P[f"{prefix}.W2"] + P[f"{prefix}.b2"]
        if keep_cache:
            bcache["mlp"] = (lnc, y, u, gu, th)
        cache["blocks"].append(bcache)
    if activations is not None:
        activations.append(z.copy())
    out = z @ P["head.W_out"] + P["head.b_out"]               # (B, F, H, W, C)
    cache["z_final"] = z
    eps = out.transpose(0, 1, 4, 2, 3)
    return eps, cache


def forward(model: TransformerDenoiser, x_t, t, class_id=None,
            perturb: PerturbationConfig | None = None, *, return_activations: bool = False,
            identity_matrix: bool = False):
    """Predict epsilon for one clip ``[f, c, h, w]`` or a batch ``[B, f, c, h, w]``.

    ``class_id`` ``None`` selects the null token. ``identity_matrix`` makes
    attention skips multiply V by an explicit identity instead of bypassing
    the softmax; both are the same map and exist side by side for testing.
    With ``return_activations`` the block inputs (and final features) are
    returned as well.
    """
    perturb = NO_PERTURB if perturb is None else perturb
    perturb.validate(model.arch)
    x, t, cls, single = _as_batch(model, x_t, t, class_id)
    acts = [] if return_activations else None
    eps, _ = _run(model, x, t, cls, perturb, keep_cache=False, identity_matrix=identity_matrix,
                  activations=acts)
    if single:
        eps = eps[0]
        acts = None if acts is None else [a[0] for a in acts]
    return (eps, acts) if return_activations else eps


def forward_with_cache(model: TransformerDenoiser, x_t, t, class_id):
    """Unperturbed batched forward that keeps what ``backward`` needs."""
    x, t, cls, _ = _as_batch(model, x_t, t, class_id)
    return _run(model, x, t, cls, NO_PERTURB, keep_cache=True)


def backward(model: TransformerDenoiser, cache: dict, d_eps: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/d_eps."""
    arch, P = model.arch, model.params
    grads = {}
    dout = d_eps.transpose(0, 1, 3, 4, 2)                     # (B, F, H, W, C)
    grads["head.W_out"] = _wsum(cache["z_final"], dout)
    grads["head.b_out"] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    dz = dout @ P["head.W_out"].T
    for l in reversed(range(arch.layers)):
        bcache = cache["blocks"][l]
        prefix = f"layer{l}.mlp"
        lnc, y, u, gu, th = bcache["mlp"]
        grads[f"{prefix}.W2"] = _wsum(gu, dz)
        grads[f"{prefix}.b2"] = dz.reshape(-1, arch.dim).sum(axis=0)
        du = (dz @ P[f"{prefix}.W2"].T) * _gelu_grad(u, th)
        grads[f"{prefix}.W1"] = _wsum(y, du)
        grads[f"{prefix}.b1"] = du.reshape(-1, du.shape[-1]).sum(axis=0)
        dx, grads[f"{prefix}.ln_g"], grads[f"{prefix}.ln_b"] = _ln_bwd(du @ P[f"{prefix}.W1"].T, lnc)
        dz = dz + dx
        for ax in reversed(arch.axes):
            prefix = f"layer{l}.{ax}"
            lnc, ac = bcache[ax]
            dy = _attention_bwd(_group(dz, ax), ac, P, prefix, grads)
            dx, grads[f"{prefix}.ln_g"], grads[f"{prefix}.ln_b"] = _ln_bwd(_ungroup(dy, ax, dz.shape), lnc)
            dz = dz + dx
    grads["embed.W_in"] = _wsum(cache["tokens"], dz)
    grads["embed.b_in"] = dz.reshape(-1, arch.dim).sum(axis=0)
    dcls = np.zeros_like(P["embed.class"])
    np.add.at(dcls, cache["cls"], dz.sum(axis=(1, 2, 3)))
    grads["embed.class"] = dcls
    return grads
