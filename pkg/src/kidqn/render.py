"""Top-down observations and ground-truth object masks on the action grid."""

from __future__ import annotations

import functools
from pathlib import Path

import numpy as np

from .core import NEAREST, WorkspaceConfig, rotate_grid
from .sim import Scene

HEIGHT_SCALE_CM = 25.0  # height that maps to 1.0 in the height channel


@functools.lru_cache(maxsize=16)
def _pixel_centres(side_cm: float, m: int) -> np.ndarray:
    c = (np.arange(m) + 0.5) * side_cm / m
    ys, xs = np.meshgrid(c, c, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    pts.setflags(write=False)
    return pts


def render_observation(scene: Scene, cfg: WorkspaceConfig) -> np.ndarray:
    """(2, M, M) array: normalised height map and intensity of the topmost surface."""
    m = cfg.obs_grid
    pts = _pixel_centres(cfg.side_cm, m)
    height = np.zeros(m * m)
    inten = np.full(m * m, float(scene.floor_intensity))
    scale = cfg.scale(HEIGHT_SCALE_CM)
    entities = list(scene.walls)
    if scene.object is not None:
        entities.append(scene.object)
    for e in entities:
        inside = e.footprint.contains(pts)
        h = e.height / scale
        top = inside & (h > height)
        height[top] = h
        inten[top] = e.intensity
    return np.stack([height.reshape(m, m), inten.reshape(m, m)])


def object_footprint_pixels(scene: Scene, cfg: WorkspaceConfig) -> np.ndarray:
    m = cfg.obs_grid
    if scene.object is None:
        return np.zeros((m, m), dtype=bool)
    return scene.object.footprint.contains(_pixel_centres(cfg.side_cm, m)).reshape(m, m)


def downsample_mask(fine: np.ndarray) -> np.ndarray:
    """2x downsampling; a coarse cell is set when at least 2 of its 4 sub-cells are."""
    n = fine.shape[0] // 2
    counts = fine.reshape(n, 2, n, 2).sum(axis=(1, 3))
    return counts >= 2


def rasterize_object_mask(scene: Scene, phi: float, cfg: WorkspaceConfig) -> np.ndarray:
    """Object footprint rotated by ``phi`` and brought to the N x N action grid."""
    fine = object_footprint_pixels(scene, cfg).astype(float)
    if phi % 360.0 != 0.0:
        fine = rotate_grid(fine, phi, NEAREST)
    return downsample_mask(fine >= 0.5)


def object_masks(scene: Scene, cfg: WorkspaceConfig) -> np.ndarray:
    """MaskSet, shape (n_rotations, N, N).

    The Q-function rotates its features back before the head, so every
    rotation's Q map is world-aligned and shares the unrotated mask.
    """
    mask = rasterize_object_mask(scene, 0.0, cfg)
    return np.repeat(mask[None], cfg.n_rotations, axis=0)


def write_pgm(path, channel: np.ndarray, vmax: float = 1.0) -> Path:
    """Binary 8-bit grayscale image; values clipped to [0, vmax]."""
    path = Path(path)
    img = np.clip(np.asarray(channel, dtype=float) / vmax, 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())
    return path
