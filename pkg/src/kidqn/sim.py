"""Quasi-static 2D Slide-to-Wall simulator.

The gripper is a point tip that sweeps from ``p - retreat * u`` to the action
point ``p``.  An object touched by the sweep translates with the tip (no
rotation in free space) until the sweep ends, it meets a wall, or it meets the
workspace boundary.  Meeting a wall snaps the object flush against the wall
face; any remaining sweep then carries the tip underneath the object.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from .core import Action, Pose2D, WorkspaceConfig, action_to_world, unit
from .geometry import Rect

SCENE_FORMAT = "kidqn-scene v1"

OBJECT_SIZE = (15.0, 15.0, 3.0)  # footprint length, width, height (cm)
TRAIN_WALL = dict(length=30.0, thickness=5.0, height=25.0)
TEST_WALL_LENGTH = (10.0, 20.0)
TEST_WALL_HEIGHT = (0.5, 3.0)
TEST_WALL_THICKNESS = 5.0
CORNER_SLACK = 8.0
MAX_PLACEMENT_TRIES = 100


class SceneGenerationError(RuntimeError):
    pass


class Regime(str, enum.Enum):
    SIM = "SIM"
    REAL = "REAL"


class OutcomeKind(str, enum.Enum):
    GRASP_SUCCESS = "GRASP_SUCCESS"
    OBJECT_MOVED = "OBJECT_MOVED"
    NO_CONTACT = "NO_CONTACT"
    WALL_COLLISION = "WALL_COLLISION"


@dataclass(frozen=True)
class SimParams:
    retreat_cm: float = 10.0
    contact_eps: float = 0.5
    theta_tol_deg: float = 30.0
    h_min_wall: float = 0.5


DEFAULT_SIM = SimParams()


@dataclass(frozen=True)
class SceneObject:
    pose: Pose2D
    length: float
    width: float
    height: float
    intensity: float

    @property
    def footprint(self) -> Rect:
        return Rect(self.pose.x, self.pose.y, self.length, self.width, self.pose.theta)


@dataclass(frozen=True)
class Wall:
    pose: Pose2D
    length: float
    thickness: float
    height: float
    intensity: float

    @property
    def footprint(self) -> Rect:
        return Rect(self.pose.x, self.pose.y, self.length, self.thickness, self.pose.theta)


@dataclass(frozen=True)
class Scene:
    object: Optional[SceneObject]
    walls: Tuple[Wall, ...]
    floor_intensity: float
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))


@dataclass(frozen=True)
class SagOutcome:
    kind: OutcomeKind
    reward: int
    object_displacement: float
    new_scene: Scene
    fatal: bool = False  # wall contact under the REAL rule ends the episode as a failure


# --------------------------------------------------------------------------
# scene generation


def _corner_wall(rng: np.random.Generator, length: float, thickness: float, side: float) -> Rect:
    """A wall whose back face hugs the origin corner within CORNER_SLACK of the tightest fit.

    The wall's outward normal (into the workspace) points at angle alpha in
    [0, 90]; its back face lies on the line p . m = D with
    D = D_min(alpha) + U[0, slack], where D_min is the smallest offset at which
    a face of this length fits between the two workspace edges.
    """
    for _ in range(MAX_PLACEMENT_TRIES):
        alpha = rng.uniform(0.0, 90.0)
        m = unit(alpha)
        t = unit(alpha + 90.0)
        d_min = 0.5 * length * math.sin(math.radians(2.0 * alpha))
        d = d_min + rng.uniform(0.0, CORNER_SLACK)
        lo_s, hi_s = -math.inf, math.inf
        ok = True
        for k in range(2):
            lo = 0.0
            hi = side - thickness * max(m[k], 0.0)
            base = d * m[k]
            if abs(t[k]) < 1e-12:
                ok = ok and lo - 1e-9 <= base <= hi + 1e-9
                continue
            a, b = (lo - base) / t[k], (hi - base) / t[k]
            lo_s, hi_s = max(lo_s, min(a, b)), min(hi_s, max(a, b))
        if not ok or hi_s - lo_s < length:
            continue
        s0 = rng.uniform(lo_s, hi_s - length)
        c = d * m + (s0 + length / 2.0) * t + (thickness / 2.0) * m
        rect = Rect(float(c[0]), float(c[1]), length, thickness, (alpha + 90.0) % 360.0)
        if geo.inside_box(rect, side, tol=1e-6):
            return rect
    raise SceneGenerationError("could not place a corner wall")


def corner_slack(wall: Wall) -> float:
    """How far a wall's back face sits beyond its tightest corner placement (cm)."""
    alpha = (wall.pose.theta - 90.0) % 360.0
    m = unit(alpha)
    back = float(np.array([wall.pose.x, wall.pose.y]) @ m) - wall.thickness / 2.0
    return back - 0.5 * wall.length * math.sin(math.radians(2.0 * alpha))


def _place_object(rng: np.random.Generator, walls: Sequence[Wall], cfg: WorkspaceConfig):
    length, width, height = (cfg.scale(OBJECT_SIZE[0]), cfg.scale(OBJECT_SIZE[1]), cfg.scale(OBJECT_SIZE[2]))
    side = cfg.side_cm
    for _ in range(MAX_PLACEMENT_TRIES):
        theta = rng.uniform(0.0, 360.0)
        # centre drawn from the positions that keep this rotated footprint inside the workspace
        ext = np.abs(Rect(0.0, 0.0, length, width, theta).corners()).max(axis=0)
        pose = Pose2D(rng.uniform(ext[0], side - ext[0]), rng.uniform(ext[1], side - ext[1]), theta)
        rect = Rect(pose.x, pose.y, length, width, pose.theta)
        if not geo.inside_box(rect, side):
            continue
        if any(geo.rect_distance(rect, w.footprint) <= 0.0 for w in walls):
            continue
        return pose, (length, width, height)
    raise SceneGenerationError("no collision-free object pose in %d samples" % MAX_PLACEMENT_TRIES)


def _finish_scene(rng, seed, walls_geom, heights, cfg) -> Scene:
    walls = []
    for rect, h in zip(walls_geom, heights):
        walls.append(Wall(Pose2D(rect.cx, rect.cy, rect.theta), rect.length, rect.width, h, 0.0))
    pose, (length, width, height) = _place_object(rng, walls, cfg)
    floor_i = float(rng.uniform())
    obj_i = float(rng.uniform())
    walls = [replace(w, intensity=float(rng.uniform())) for w in walls]
    obj = SceneObject(pose, length, width, height, obj_i)
    return Scene(obj, tuple(walls), floor_i, int(seed))


def generate_training_scene(seed: int, cfg: WorkspaceConfig) -> Scene:
    """One tall wall near the origin corner and a flat box at a random free pose."""
    rng = np.random.default_rng(seed)
    s = cfg.scale
    rect = _corner_wall(rng, s(TRAIN_WALL["length"]), s(TRAIN_WALL["thickness"]), cfg.side_cm)
    return _finish_scene(rng, seed, [rect], [s(TRAIN_WALL["height"])], cfg)


def generate_test_scene(seed: int, cfg: WorkspaceConfig) -> Scene:
    """One or two short, low walls (never taller than the object)."""
    rng = np.random.default_rng(seed)
    s = cfg.scale
    count = 1 if rng.uniform() < 0.5 else 2
    rects: List[Rect] = []
    heights: List[float] = []
    for _ in range(count):
        for _attempt in range(MAX_PLACEMENT_TRIES):
            length = s(rng.uniform(*TEST_WALL_LENGTH))
            rect = _corner_wall(rng, length, s(TEST_WALL_THICKNESS), cfg.side_cm)
            if all(geo.rect_distance(rect, r) > 0.0 for r in rects):
                break
        else:
            raise SceneGenerationError("could not place a second wall")
        rects.append(rect)
        heights.append(s(rng.uniform(*TEST_WALL_HEIGHT)))
    return _finish_scene(rng, seed, rects, heights, cfg)


# --------------------------------------------------------------------------
# shovel-and-grasp


def contacted_face(obj: Rect, wall: Rect, u) -> Tuple[float, np.ndarray]:
    """Gap to the wall face nearest ``obj`` and that face's inward (into-wall) normal."""
    best = None
    for a, b, n_out in wall.edges():
        d = geo.segment_rect_distance(a, b, obj)
        key = (round(d, 6), -float(np.asarray(u) @ -n_out))
        if best is None or key < best[0]:
            best = (key, d, -n_out)
    return best[1], best[2]


def grasp_success(scene: Scene, a: Action, cfg: WorkspaceConfig, params: SimParams = DEFAULT_SIM) -> bool:
    """Whether closing the gripper with the tip at the action point grasps the object."""
    if scene.object is None:
        return False
    p, u = action_to_world(a, cfg)
    obj = scene.object.footprint
    if not bool(obj.contains(p[None, :], margin=1e-9)[0]):
        return False
    cos_tol = math.cos(math.radians(params.theta_tol_deg))
    for w in scene.walls:
        if w.height < params.h_min_wall:
            continue
        gap, n_in = contacted_face(obj, w.footprint, u)
        if gap <= params.contact_eps and float(u @ n_in) >= cos_tol - 1e-12:
            return True
    return False


def _snap_to_wall(obj: Rect, wall: Rect, u, walls: Sequence[Rect], side: float) -> Rect:
    _, n_in = contacted_face(obj, wall, u)
    n_out = -n_in
    face_angle = math.degrees(math.atan2(n_out[1], n_out[0])) + 90.0
    delta = (face_angle - obj.theta) % 90.0
    if delta > 45.0:
        delta -= 90.0
    rot = Rect(obj.cx, obj.cy, obj.length, obj.width, (obj.theta + delta) % 360.0)
    face_offset = max(float(c @ n_out) for c in wall.corners())
    shift = face_offset - min(float(c @ n_out) for c in rot.corners())
    snapped = rot.moved(shift * n_out)
    if not geo.inside_box(snapped, side, tol=1e-6):
        return obj
    if any(geo.penetrates(snapped, w) for w in walls):
        return obj
    return snapped


def execute_sag(
    scene: Scene,
    a: Action,
    regime: Regime,
    cfg: WorkspaceConfig,
    params: SimParams = DEFAULT_SIM,
) -> SagOutcome:
    regime = Regime(regime)
    p, u = action_to_world(a, cfg)
    start = p - params.retreat_cm * u
    for w in scene.walls:
        if geo.segment_clip(start, p, w.footprint) is not None:
            return SagOutcome(OutcomeKind.WALL_COLLISION, 0, 0.0, scene, fatal=regime is Regime.REAL)
    if scene.object is None:
        return SagOutcome(OutcomeKind.NO_CONTACT, 0, 0.0, scene)
    obj = scene.object.footprint
    hit = geo.segment_clip(start, p, obj)
    if hit is None:
        return SagOutcome(OutcomeKind.NO_CONTACT, 0, 0.0, scene)

    push_len = (1.0 - hit[0]) * params.retreat_cm
    wall_rects = [w.footprint for w in scene.walls]
    t_walls = [geo.translation_contact_time(obj, r, u, push_len) for r in wall_rects]
    t_box = geo.box_exit_time(obj, u, cfg.side_cm, push_len)
    d = min([push_len, t_box, *t_walls])
    moved = obj.moved(d * u)
    blocking = [k for k, t in enumerate(t_walls) if t <= d and t < push_len]
    if blocking:
        moved = _snap_to_wall(moved, wall_rects[blocking[0]], u, wall_rects, cfg.side_cm)

    new_obj = replace(scene.object, pose=Pose2D(moved.cx, moved.cy, moved.theta))
    new_scene = replace(scene, object=new_obj)
    if grasp_success(new_scene, a, cfg, params):
        return SagOutcome(OutcomeKind.GRASP_SUCCESS, 1, d, new_scene)
    return SagOutcome(OutcomeKind.OBJECT_MOVED, 0, d, new_scene)


# --------------------------------------------------------------------------
# text serialisation


def scene_to_text(scene: Scene) -> str:
    lines = [SCENE_FORMAT, f"rng_seed = {scene.rng_seed}", f"floor_intensity = {scene.floor_intensity!r}"]
    o = scene.object
    lines.append(f"object = {0 if o is None else 1}")
    if o is not None:
        for k, v in (("x", o.pose.x), ("y", o.pose.y), ("theta", o.pose.theta), ("length", o.length),
                     ("width", o.width), ("height", o.height), ("intensity", o.intensity)):
            lines.append(f"object.{k} = {v!r}")
    lines.append(f"wall_count = {len(scene.walls)}")
    for n, w in enumerate(scene.walls):
        for k, v in (("x", w.pose.x), ("y", w.pose.y), ("theta", w.pose.theta), ("length", w.length),
                     ("thickness", w.thickness), ("height", w.height), ("intensity", w.intensity)):
            lines.append(f"wall.{n}.{k} = {v!r}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0] != SCENE_FORMAT:
        raise ValueError(f"not a scene record (expected header {SCENE_FORMAT!r})")
    kv = {}
    for ln in lines[1:]:
        key, _, val = ln.partition("=")
        kv[key.strip()] = val.strip()
    obj = None
    if int(kv["object"]):
        g = lambda k: float(kv[f"object.{k}"])
        obj = SceneObject(Pose2D(g("x"), g("y"), g("theta")), g("length"), g("width"), g("height"), g("intensity"))
    walls = []
    for n in range(int(kv["wall_count"])):
        g = lambda k: float(kv[f"wall.{n}.{k}"])
        walls.append(Wall(Pose2D(g("x"), g("y"), g("theta")), g("length"), g("thickness"), g("height"), g("intensity")))
    return Scene(obj, tuple(walls), float(kv["floor_intensity"]), int(kv["rng_seed"]))


def scenes_to_text(scenes: Sequence[Scene]) -> str:
    return "\n".join(scene_to_text(s) for s in scenes)


def scenes_from_text(text: str) -> List[Scene]:
    chunks, cur = [], []
    for ln in text.splitlines():
        if ln.strip() == SCENE_FORMAT and cur:
            chunks.append("\n".join(cur))
            cur = []
        cur.append(ln)
    if any(c.strip() for c in cur):
        chunks.append("\n".join(cur))
    return [scene_from_text(c) for c in chunks]
