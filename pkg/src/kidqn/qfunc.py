"""Rotation-equivariant fully-convolutional Q-function with hand-written gradients.

Per rotation phi: rotate the observation by phi, run the conv trunk, rotate the
trunk features back by -phi, then apply the head (2x bilinear upsample followed
by a 1x1 convolution, repeated).  Weights are shared across rotations.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    BILINEAR,
    Action,
    DimensionError,
    WorkspaceConfig,
    _rotation_matrix_t,
    apply_linear_map,
    rotation_matrix,
)


class DivergenceError(FloatingPointError):
    """Non-finite values appeared in Q maps, targets or gradients."""


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int
    out_channels: int
    activation: str = "relu"


@dataclass(frozen=True)
class HeadSpec:
    out_channels: int
    activation: str = "none"


@dataclass(frozen=True)
class NetConfig:
    trunk: Tuple[ConvSpec, ...] = (
        ConvSpec(3, 2, 16),
        ConvSpec(3, 2, 32),
        ConvSpec(3, 1, 32),
    )
    head: Tuple[HeadSpec, ...] = (HeadSpec(1),)
    in_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(self.trunk))
        object.__setattr__(self, "head", tuple(self.head))
        for s in self.trunk:
            if s.activation not in ("relu", "none"):
                raise ValueError(f"unsupported activation {s.activation!r}")
        if not self.head or self.head[-1].out_channels != 1:
            raise ValueError("head must end with a single output channel")

    def trunk_size(self, m: int) -> int:
        for s in self.trunk:
            m = (m + 2 * (s.kernel // 2) - s.kernel) // s.stride + 1
        return m

    def output_size(self, m: int) -> int:
        return self.trunk_size(m) * 2 ** len(self.head)

    def check(self, ws: WorkspaceConfig) -> None:
        if self.in_channels != ws.channels:
            raise DimensionError(f"net expects {self.in_channels} channels, workspace has {ws.channels}")
        out = self.output_size(ws.obs_grid)
        if out != ws.action_grid:
            raise DimensionError(
                f"net maps {ws.obs_grid}x{ws.obs_grid} to {out}x{out}, action grid is {ws.action_grid}"
            )

    def layer_names(self) -> List[str]:
        return [f"trunk.{k}" for k in range(len(self.trunk))] + [f"head.{k}" for k in range(len(self.head))]


@dataclass
class NetParams:
    weights: Dict[str, np.ndarray]
    momentum: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.momentum:
            self.momentum = {k: np.zeros_like(v) for k, v in self.weights.items()}

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.weights.items()},
                         {k: v.copy() for k, v in self.momentum.items()})

    def keys(self):
        return list(self.weights.keys())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in self.keys():
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.weights[k], dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(self.momentum[k], dtype="<f8").tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.weights.values())


def param_group(name: str) -> str:
    return name.split(".", 1)[0]


def init_params(seed: int, net_cfg: NetConfig) -> NetParams:
    """He-style uniform weights (variance 2 / fan_in), zero biases, zero momentum."""
    rng = np.random.default_rng(seed)
    w: Dict[str, np.ndarray] = {}
    c = net_cfg.in_channels
    for k, s in enumerate(net_cfg.trunk):
        if s.kernel < 1 or s.kernel % 2 == 0 or s.stride < 1 or s.out_channels < 1:
            raise ValueError(f"inconsistent conv layer spec {s}")
        fan_in = c * s.kernel * s.kernel
        bound = np.sqrt(6.0 / fan_in)
        w[f"trunk.{k}.w"] = rng.uniform(-bound, bound, size=(s.out_channels, c, s.kernel, s.kernel))
        w[f"trunk.{k}.b"] = np.zeros(s.out_channels)
        c = s.out_channels
    for k, s in enumerate(net_cfg.head):
        if s.out_channels < 1:
            raise ValueError(f"inconsistent head spec {s}")
        bound = np.sqrt(6.0 / c)
        w[f"head.{k}.w"] = rng.uniform(-bound, bound, size=(s.out_channels, c))
        w[f"head.{k}.b"] = np.zeros(s.out_channels)
        c = s.out_channels
    return NetParams(w)


# --------------------------------------------------------------------------
# layer primitives (single image, channels-first)


def _im2col(x: np.ndarray, k: int, stride: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(x.shape[0] * k * k, ho * wo)
    return cols, (ho, wo)


def conv_forward(x, w, b, stride):
    o, c, k, _ = w.shape
    cols, (ho, wo) = _im2col(x, k, stride)
    out = w.reshape(o, -1) @ cols + b[:, None]
    return out.reshape(o, ho, wo), cols


def conv_backward(dout, cols, x_shape, w, stride, need_dx=True):
    o, c, k, _ = w.shape
    d2 = dout.reshape(o, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    ho, wo = dout.shape[1:]
    dcols = (w.reshape(o, -1).T @ d2).reshape(c, k, k, ho, wo)
    p = k // 2
    h, wd = x_shape[1], x_shape[2]
    dxp = np.zeros((c, h + 2 * p, wd + 2 * p))
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, ki, kj]
    return dxp[:, p:p + h, p:p + wd], dw, db


@functools.lru_cache(maxsize=32)
def _upsample_1d(n: int) -> np.ndarray:
    # bilinear, half-pixel centres, edge-clamped
    out = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), n - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        f = src - i0
        out[o, i0] += 1.0 - f
        out[o, i1] += f
    return out


@functools.lru_cache(maxsize=32)
def upsample_matrix(n: int) -> sp.csr_matrix:
    u = sp.csr_matrix(_upsample_1d(n))
    return sp.kron(u, u, format="csr")


@functools.lru_cache(maxsize=32)
def _upsample_matrix_t(n: int) -> sp.csr_matrix:
    return upsample_matrix(n).T.tocsr()


def upsample2x(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return apply_linear_map(upsample_matrix(n), x, (2 * n, 2 * n))


def upsample2x_adjoint(g: np.ndarray) -> np.ndarray:
    n = g.shape[-1] // 2
    return apply_linear_map(_upsample_matrix_t(n), g, (n, n))


def _rotate(x: np.ndarray, angle: float) -> np.ndarray:
    if angle % 360.0 == 0.0:
        return x
    n = x.shape[-1]
    return apply_linear_map(rotation_matrix(n, n, float(angle), BILINEAR), x, (n, n))


def _rotate_adjoint(g: np.ndarray, angle: float) -> np.ndarray:
    if angle % 360.0 == 0.0:
        return g
    n = g.shape[-1]
    return apply_linear_map(_rotation_matrix_t(n, n, float(angle), BILINEAR), g, (n, n))


# --------------------------------------------------------------------------


@dataclass
class ForwardCache:
    net_cfg: NetConfig
    rotations: Tuple[float, ...]
    obs_shape: Tuple[int, ...]
    per_rotation: List[dict]


def _forward_one(params: NetParams, obs: np.ndarray, phi: float, net_cfg: NetConfig, keep: bool):
    w = params.weights
    x = _rotate(obs, phi)
    rec = {"trunk": [], "head": []}
    for k, s in enumerate(net_cfg.trunk):
        z, cols = conv_forward(x, w[f"trunk.{k}.w"], w[f"trunk.{k}.b"], s.stride)
        a = np.maximum(z, 0.0) if s.activation == "relu" else z
        if keep:
            rec["trunk"].append((x.shape, cols, z > 0 if s.activation == "relu" else None))
        x = a
    x = _rotate(x, -phi)
    for k, s in enumerate(net_cfg.head):
        up = upsample2x(x)
        c = up.shape[0]
        z = (w[f"head.{k}.w"] @ up.reshape(c, -1) + w[f"head.{k}.b"][:, None]).reshape(-1, *up.shape[1:])
        a = np.maximum(z, 0.0) if s.activation == "relu" else z
        if keep:
            rec["head"].append((up, z > 0 if s.activation == "relu" else None))
        x = a
    return x[0], rec


def forward(params: NetParams, obs: np.ndarray, net_cfg: NetConfig, ws: WorkspaceConfig, keep_cache: bool = True):
    """Q maps of shape (n_rotations, N, N) and the activation cache for :func:`backward`."""
    obs = np.asarray(obs, dtype=float)
    expect = (ws.channels, ws.obs_grid, ws.obs_grid)
    if obs.shape != expect:
        raise DimensionError(f"observation shape {obs.shape} != {expect}")
    maps, recs = [], []
    for phi in ws.rotations:
        q, rec = _forward_one(params, obs, phi, net_cfg, keep_cache)
        maps.append(q)
        recs.append(rec)
    qmaps = np.stack(maps)
    cache = ForwardCache(net_cfg, ws.rotations, obs.shape, recs) if keep_cache else None
    return qmaps, cache


def q_values(params: NetParams, obs: np.ndarray, net_cfg: NetConfig, ws: WorkspaceConfig) -> np.ndarray:
    return forward(params, obs, net_cfg, ws, keep_cache=False)[0]


def backward(params: NetParams, cache: ForwardCache, grad_qmaps: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradient of <grad_qmaps, Q maps> with respect to every weight."""
    if cache is None or not cache.per_rotation or not cache.per_rotation[0]["trunk"]:
        raise ValueError("backward needs the cache of a forward pass run with keep_cache=True")
    grad_qmaps = np.asarray(grad_qmaps, dtype=float)
    if grad_qmaps.shape[0] != len(cache.rotations):
        raise DimensionError("gradient maps do not match the cached forward pass")
    w = params.weights
    net_cfg = cache.net_cfg
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    for phi, rec, g in zip(cache.rotations, cache.per_rotation, grad_qmaps):
        if not np.any(g):
            continue
        d = g[None]
        for k in reversed(range(len(net_cfg.head))):
            up, mask = rec["head"][k]
            if mask is not None:
                d = d * mask
            c = up.shape[0]
            d2 = d.reshape(d.shape[0], -1)
            grads[f"head.{k}.w"] += d2 @ up.reshape(c, -1).T
            grads[f"head.{k}.b"] += d2.sum(axis=1)
            dup = (w[f"head.{k}.w"].T @ d2).reshape(up.shape)
            d = upsample2x_adjoint(dup)
        d = _rotate_adjoint(d, -phi)
        for k in reversed(range(len(net_cfg.trunk))):
            x_shape, cols, mask = rec["trunk"][k]
            if mask is not None:
                d = d * mask
            dx, dw, db = conv_backward(d, cols, x_shape, w[f"trunk.{k}.w"], net_cfg.trunk[k].stride, need_dx=k > 0)
            grads[f"trunk.{k}.w"] += dw
            grads[f"trunk.{k}.b"] += db
            d = dx
    return grads


# --------------------------------------------------------------------------


def _check_finite(q: np.ndarray) -> None:
    if not np.all(np.isfinite(q)):
        raise DivergenceError("non-finite value in Q maps")


def greedy_action(qmaps: np.ndarray) -> Action:
    """Arg-max action; ties go to the smallest flat index."""
    q = np.asarray(qmaps)
    if q.size == 0:
        raise ValueError("empty Q maps")
    _check_finite(q)
    return Action.from_flat(int(np.argmax(q.ravel())), q.shape[-1])


def masked_greedy_action(qmaps: np.ndarray, masks: np.ndarray) -> Action:
    q = np.asarray(qmaps)
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != q.shape:
        raise DimensionError(f"mask shape {masks.shape} != Q shape {q.shape}")
    if not masks.any():
        raise ValueError("mask has no admissible action")
    _check_finite(q[masks])
    flat = np.where(masks.ravel(), q.ravel(), -np.inf)
    return Action.from_flat(int(np.argmax(flat)), q.shape[-1])
