"""Oriented rectangles and the handful of convex-polygon queries the simulator needs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import unit

# Overlap below this depth (cm) counts as touching, not penetration.
EPS = 1e-9


@dataclass(frozen=True)
class Rect:
    cx: float
    cy: float
    length: float  # along the heading theta
    width: float
    theta: float  # degrees

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def axes(self):
        ex = unit(self.theta)
        ey = np.array([-ex[1], ex[0]])
        return ex, ey

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners, shape (4, 2)."""
        ex, ey = self.axes()
        hl, hw = self.length / 2.0, self.width / 2.0
        c = self.center
        return np.array([
            c - hl * ex - hw * ey,
            c + hl * ex - hw * ey,
            c + hl * ex + hw * ey,
            c - hl * ex + hw * ey,
        ])

    def contains(self, pts, margin: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside (shrunk by ``margin``; negative grows)."""
        pts = np.asarray(pts, dtype=float)
        ex, ey = self.axes()
        d = pts - self.center
        lx = d @ ex
        ly = d @ ey
        return (np.abs(lx) <= self.length / 2.0 - margin) & (np.abs(ly) <= self.width / 2.0 - margin)

    def edges(self):
        """(start, end, outward unit normal) per edge."""
        c = self.corners()
        out = []
        for k in range(4):
            a, b = c[k], c[(k + 1) % 4]
            t = (b - a) / np.linalg.norm(b - a)
            out.append((a, b, np.array([t[1], -t[0]])))
        return out

    def moved(self, delta) -> "Rect":
        return Rect(self.cx + float(delta[0]), self.cy + float(delta[1]), self.length, self.width, self.theta)


def _sat_axes(a: Rect, b: Rect):
    return [*a.axes(), *b.axes()]


def _project(corners: np.ndarray, axis: np.ndarray):
    p = corners @ axis
    return p.min(), p.max()


def overlap_depth(a: Rect, b: Rect) -> float:
    """Minimum penetration over separating axes; <= 0 means separated or touching."""
    ca, cb = a.corners(), b.corners()
    depth = math.inf
    for ax in _sat_axes(a, b):
        a0, a1 = _project(ca, ax)
        b0, b1 = _project(cb, ax)
        depth = min(depth, min(a1 - b0, b1 - a0))
    return depth


def penetrates(a: Rect, b: Rect, tol: float = 1e-6) -> bool:
    return overlap_depth(a, b) > tol


def inside_box(r: Rect, side: float, tol: float = 1e-9) -> bool:
    c = r.corners()
    return bool(np.all(c >= -tol) and np.all(c <= side + tol))


def translation_contact_time(a: Rect, b: Rect, u, max_t: float) -> float:
    """Distance ``a`` can translate along unit ``u`` before penetrating ``b``.

    Moving separating-axis test; exact for convex shapes.  Touching faces that
    slide past each other do not block.
    """
    u = np.asarray(u, dtype=float)
    ca, cb = a.corners(), b.corners()
    t_in, t_out = -math.inf, math.inf
    for ax in _sat_axes(a, b):
        a0, a1 = _project(ca, ax)
        b0, b1 = _project(cb, ax)
        v = float(u @ ax)
        if abs(v) < 1e-12:
            if a1 - b0 <= EPS or b1 - a0 <= EPS:
                return max_t
            continue
        if v > 0:
            enter, leave = (b0 + EPS - a1) / v, (b1 - EPS - a0) / v
        else:
            enter, leave = (b1 - EPS - a0) / v, (b0 + EPS - a1) / v
        t_in = max(t_in, enter)
        t_out = min(t_out, leave)
    if t_in >= t_out or t_out <= 0.0 or t_in >= max_t:
        return max_t
    return max(t_in, 0.0)


def box_exit_time(r: Rect, u, side: float, max_t: float) -> float:
    """Distance ``r`` can translate along ``u`` and stay inside [0, side]^2."""
    t = max_t
    for v in r.corners():
        for k in range(2):
            if u[k] > 1e-15:
                t = min(t, (side - v[k]) / u[k])
            elif u[k] < -1e-15:
                t = min(t, -v[k] / u[k])
    return max(t, 0.0)


def segment_clip(p0, p1, r: Rect):
    """Parameter interval [t0, t1] of segment p0->p1 inside ``r``, or None."""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    ex, ey = r.axes()
    rel = p0 - r.center
    t0, t1 = 0.0, 1.0
    for ax, half in ((ex, r.length / 2.0), (ey, r.width / 2.0)):
        o = float(rel @ ax)
        v = float(d @ ax)
        if abs(v) < 1e-15:
            if abs(o) > half:
                return None
            continue
        ta, tb = (-half - o) / v, (half - o) / v
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_rect_distance(a, b, r: Rect) -> float:
    if segment_clip(a, b, r) is not None:
        return 0.0
    ca = r.corners()
    d = min(_point_segment_distance(a, ca[k], ca[(k + 1) % 4]) for k in range(4))
    d = min(d, min(_point_segment_distance(b, ca[k], ca[(k + 1) % 4]) for k in range(4)))
    return min(d, min(_point_segment_distance(c, a, b) for c in ca))


def rect_distance(a: Rect, b: Rect) -> float:
    if overlap_depth(a, b) > 0.0:
        return 0.0
    return min(segment_rect_distance(s, e, b) for s, e, _ in a.edges())
