"""Shared coordinate conventions, action indexing and grid resampling.

World frame: x to the right, y along increasing row index, both in cm, origin
at the workspace corner the walls are spawned near.  A grid cell ``(i, j)`` is
column ``i`` (x) and row ``j`` (y).  Q maps are stored as arrays of shape
``(n_rotations, N, N)`` indexed ``[phi_idx, j, i]`` so ``ravel()`` order matches
the flat action index.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.sparse as sp

# Push heading for rotation phi is PUSH_BASE_DEG - phi.  A fixed heading in the
# phi-rotated image therefore maps to this world heading, and the default
# rotations (0, 45, 90) give headings 270, 225, 180: -y, the corner diagonal, -x.
PUSH_BASE_DEG = 270.0

BILINEAR = "bilinear"
NEAREST = "nearest"


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class WorkspaceConfig:
    side_cm: float = 40.0
    action_grid: int = 40
    obs_grid: int = 80
    rotations: Tuple[float, ...] = (0.0, 45.0, 90.0)
    channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(float(r) for r in self.rotations))
        if self.side_cm <= 0:
            raise ValueError("side_cm must be positive")
        if self.action_grid < 1:
            raise ValueError("action_grid must be >= 1")
        if self.obs_grid != 2 * self.action_grid:
            raise ValueError(
                f"obs_grid must be exactly 2 * action_grid, got {self.obs_grid} vs {self.action_grid}"
            )
        if not self.rotations:
            raise ValueError("at least one rotation is required")
        if len(set(self.rotations)) != len(self.rotations):
            raise ValueError(f"rotations must be distinct: {self.rotations}")
        if any(not 0.0 <= r < 180.0 for r in self.rotations):
            raise ValueError(f"rotations must lie in [0, 180): {self.rotations}")
        if self.channels != 2:
            raise ValueError("the renderer produces exactly 2 channels")

    @classmethod
    def desk(cls, **overrides) -> "WorkspaceConfig":
        """The reduced-resolution configuration used for the learning experiments."""
        kw = dict(action_grid=20, obs_grid=40)
        kw.update(overrides)
        return cls(**kw)

    @property
    def n_rotations(self) -> int:
        return len(self.rotations)

    @property
    def n_actions(self) -> int:
        return self.action_grid * self.action_grid * self.n_rotations

    @property
    def cell_cm(self) -> float:
        return self.side_cm / self.action_grid

    @property
    def pixel_cm(self) -> float:
        return self.side_cm / self.obs_grid

    def scale(self, length_cm: float) -> float:
        """Scale a length quoted for the 40 cm reference workspace."""
        return length_cm * self.side_cm / 40.0


@dataclass(frozen=True, order=True)
class Action:
    i: int
    j: int
    phi_idx: int

    def flat(self, n: int) -> int:
        return self.phi_idx * n * n + self.j * n + self.i

    @classmethod
    def from_flat(cls, index: int, n: int) -> "Action":
        phi_idx, rem = divmod(int(index), n * n)
        j, i = divmod(rem, n)
        return cls(i, j, phi_idx)

    def validate(self, cfg: WorkspaceConfig) -> None:
        n = cfg.action_grid
        if not (0 <= self.i < n and 0 <= self.j < n and 0 <= self.phi_idx < cfg.n_rotations):
            raise ValueError(f"malformed action {self} for grid {n} x {n} x {cfg.n_rotations}")


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(self.theta) % 360.0)


def push_direction_deg(phi: float) -> float:
    return (PUSH_BASE_DEG - phi) % 360.0


def unit(angle_deg: float) -> np.ndarray:
    # exact values at multiples of 90 keep axis-aligned geometry free of 1e-17 noise
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([round(c, 15) + 0.0, round(s, 15) + 0.0])


def action_to_world(a: Action, cfg: WorkspaceConfig) -> Tuple[np.ndarray, np.ndarray]:
    """World point (cm) and unit push direction for an action.

    Q maps are world-aligned (features are rotated back before the head), so
    the cell centre maps straight to the workspace; the rotation only selects
    the push heading.
    """
    a.validate(cfg)
    h = cfg.cell_cm
    point = np.array([(a.i + 0.5) * h, (a.j + 0.5) * h])
    return point, unit(push_direction_deg(cfg.rotations[a.phi_idx]))


def world_to_cell(point, cfg: WorkspaceConfig) -> Tuple[int, int]:
    h = cfg.cell_cm
    n = cfg.action_grid
    i = min(max(int(math.floor(point[0] / h)), 0), n - 1)
    j = min(max(int(math.floor(point[1] / h)), 0), n - 1)
    return i, j


# --------------------------------------------------------------------------
# Resampling.  Every resampling here is linear, so it is materialised once as a
# sparse matrix acting on the row-major flattened grid; the adjoint is then the
# exact transpose.


def _source_coords(h: int, w: int, angle: float):
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    a = math.radians(angle)
    c, s = math.cos(a), math.sin(a)
    dx, dy = cols - cx, rows - cy
    # output(p) = input(R(-angle) (p - centre) + centre)
    xs = c * dx + s * dy + cx
    ys = -s * dx + c * dy + cy
    return np.round(xs, 9).ravel(), np.round(ys, 9).ravel()


@functools.lru_cache(maxsize=256)
def rotation_matrix(h: int, w: int, angle: float, mode: str = BILINEAR) -> sp.csr_matrix:
    n = h * w
    if angle % 360.0 == 0.0:
        return sp.identity(n, format="csr")
    xs, ys = _source_coords(h, w, angle)
    out_idx = np.arange(n)
    if mode == NEAREST:
        xi = np.floor(xs + 0.5).astype(int)
        yi = np.floor(ys + 0.5).astype(int)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        return sp.csr_matrix(
            (np.ones(ok.sum()), (out_idx[ok], yi[ok] * w + xi[ok])), shape=(n, n)
        )
    if mode != BILINEAR:
        raise ValueError(f"unknown resampling mode {mode!r}")
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    r, c, v = [], [], []
    for ddx, ddy, wt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xx, yy = x0 + ddx, y0 + ddy
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h) & (wt != 0)
        r.append(out_idx[ok])
        c.append(yy[ok] * w + xx[ok])
        v.append(wt[ok])
    mat = sp.csr_matrix(
        (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n)
    )
    mat.sum_duplicates()
    return mat


@functools.lru_cache(maxsize=256)
def _rotation_matrix_t(h: int, w: int, angle: float, mode: str) -> sp.csr_matrix:
    return rotation_matrix(h, w, angle, mode).T.tocsr()


def apply_linear_map(mat: sp.spmatrix, field: np.ndarray, out_shape) -> np.ndarray:
    """Apply a flattened-grid linear map to the last two axes of ``field``."""
    lead = field.shape[:-2]
    flat = field.reshape(-1, field.shape[-2] * field.shape[-1])
    out = np.asarray(mat @ flat.T).T
    return out.reshape(lead + tuple(out_shape))


def _check_square(field: np.ndarray) -> Tuple[int, int]:
    field = np.asarray(field)
    if field.ndim < 2 or field.shape[-1] != field.shape[-2]:
        raise DimensionError(f"expected square grid(s), got shape {field.shape}")
    return field.shape[-2], field.shape[-1]


def rotate_grid(field: np.ndarray, angle: float, mode: str = BILINEAR) -> np.ndarray:
    """Rotate a square grid (or a stack of them) counter-clockwise in (x, y) about its centre.

    Samples falling outside the source footprint are zero.  At 0 degrees the
    input is returned as an exact copy.
    """
    field = np.asarray(field, dtype=float)
    h, w = _check_square(field)
    if angle % 360.0 == 0.0:
        return field.copy()
    return apply_linear_map(rotation_matrix(h, w, float(angle), mode), field, (h, w))


def rotate_grid_adjoint(grad: np.ndarray, angle: float, mode: str = BILINEAR) -> np.ndarray:
    """Transpose of :func:`rotate_grid` for the same angle and mode."""
    grad = np.asarray(grad, dtype=float)
    h, w = _check_square(grad)
    if angle % 360.0 == 0.0:
        return grad.copy()
    return apply_linear_map(_rotation_matrix_t(h, w, float(angle), mode), grad, (h, w))
