"""Training runs, evaluation suites, metrics and image export."""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RANDOM_ON_OBJECT, RANDOM_UNIFORM, RunConfig
from .core import Action, WorkspaceConfig
from .learner import RunState, init_run, train_step
from .qfunc import DivergenceError, NetParams, greedy_action, q_values
from .render import object_masks, render_observation
from .sim import (
    OutcomeKind,
    Regime,
    Scene,
    SceneGenerationError,
    execute_sag,
    generate_test_scene,
    generate_training_scene,
)

log = logging.getLogger(__name__)

TRAIN_DIST = "train-dist"
UNSEEN_WALLS = "unseen-walls"
SUITES = {TRAIN_DIST: (0, generate_training_scene), UNSEEN_WALLS: (1, generate_test_scene)}
METRICS_HEADER = ("iteration", "suite", "regime", "success_rate", "mean_actions", "collisions")

# heatmap ramp: low values grey, high values red
RAMP_LOW = np.array([96.0, 96.0, 96.0])
RAMP_HIGH = np.array([255.0, 0.0, 0.0])
MARKER_RGB = (0, 255, 255)


class SuiteMismatchError(ValueError):
    pass


# --------------------------------------------------------------------------
# suites and evaluation


@functools.lru_cache(maxsize=32)
def build_suite(name: str, eval_seed: int, count: int, ws: WorkspaceConfig) -> Tuple[Tuple[int, Scene], ...]:
    """Frozen evaluation scenes: ``count`` (seed, scene) pairs drawn from a dedicated stream."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {tuple(SUITES)}")
    tag, gen = SUITES[name]
    rng = np.random.default_rng([eval_seed, tag])
    out = []
    while len(out) < count:
        seed = int(rng.integers(0, 2**31 - 1))
        try:
            out.append((seed, gen(seed, ws)))
        except SceneGenerationError:
            continue
    return tuple(out)


Policy = Callable[[Scene, np.ndarray, np.ndarray, np.random.Generator], Action]


def greedy_policy(params: NetParams, cfg: RunConfig) -> Policy:
    def act(scene, obs, masks, rng):
        return greedy_action(q_values(params, obs, cfg.net, cfg.workspace))
    return act


def random_on_object_policy(ws: WorkspaceConfig) -> Policy:
    n = ws.action_grid

    def act(scene, obs, masks, rng):
        cells = np.flatnonzero(masks.ravel())
        if cells.size == 0:
            return Action.from_flat(int(rng.integers(ws.n_actions)), n)
        return Action.from_flat(int(cells[rng.integers(cells.size)]), n)
    return act


def random_uniform_policy(ws: WorkspaceConfig) -> Policy:
    def act(scene, obs, masks, rng):
        return Action.from_flat(int(rng.integers(ws.n_actions)), ws.action_grid)
    return act


@dataclass(frozen=True)
class SceneLog:
    seed: int
    success: bool
    actions: int
    collisions: int


@dataclass
class EvalReport:
    suite: str
    regime: str
    logs: List[SceneLog] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return float(np.mean([l.success for l in self.logs])) if self.logs else 0.0

    @property
    def mean_actions(self) -> float:
        return float(np.mean([l.actions for l in self.logs])) if self.logs else 0.0

    @property
    def collisions(self) -> int:
        return int(sum(l.collisions for l in self.logs))

    def row(self, iteration: int) -> Tuple:
        return (iteration, self.suite, self.regime, f"{self.success_rate:.6f}", f"{self.mean_actions:.6f}",
                self.collisions)


def run_episode(scene: Scene, policy: Policy, regime: Regime, ws: WorkspaceConfig, cap: int,
                rng: np.random.Generator) -> Tuple[bool, int, int]:
    collisions = 0
    for k in range(cap):
        obs = render_observation(scene, ws)
        a = policy(scene, obs, object_masks(scene, ws), rng)
        out = execute_sag(scene, a, regime, ws)
        if out.kind is OutcomeKind.WALL_COLLISION:
            collisions += 1
            if out.fatal:
                return False, k + 1, collisions
        if out.kind is OutcomeKind.GRASP_SUCCESS:
            return True, k + 1, collisions
        scene = out.new_scene
    return False, cap, collisions


def evaluate_policy(policy: Policy, cfg: RunConfig, suite: str, regime: Regime, seed: int = 0) -> EvalReport:
    """Run ``policy`` on each frozen scene of ``suite``; random baselines draw from a seeded stream."""
    regime = Regime(regime)
    report = EvalReport(suite, regime.value)
    for k, (scene_seed, scene) in enumerate(build_suite(suite, cfg.eval_seed, cfg.eval_scene_count, cfg.workspace)):
        rng = np.random.default_rng([seed, scene_seed, k])
        ok, n, col = run_episode(scene, policy, regime, cfg.workspace, cfg.eval_trial_cap, rng)
        report.logs.append(SceneLog(scene_seed, ok, n, col))
    return report


def policy_for(cfg: RunConfig, params: Optional[NetParams]) -> Policy:
    if cfg.method == RANDOM_ON_OBJECT:
        return random_on_object_policy(cfg.workspace)
    if cfg.method == RANDOM_UNIFORM:
        return random_uniform_policy(cfg.workspace)
    if params is None:
        raise ValueError("a trained method needs parameters")
    return greedy_policy(params, cfg)


def cmd_eval(ckpt: Checkpoint, suite: str, regime: Regime, eval_seed: Optional[int] = None) -> EvalReport:
    cfg = ckpt.config
    if eval_seed is not None and eval_seed != cfg.eval_seed:
        raise SuiteMismatchError(f"suite seed {eval_seed} differs from the checkpoint's {cfg.eval_seed}")
    return evaluate_policy(policy_for(cfg, ckpt.params), cfg, suite, regime, seed=cfg.seed)


# --------------------------------------------------------------------------
# training


def _rng_state(g: np.random.Generator) -> dict:
    return g.bit_generator.state


def make_checkpoint(cfg: RunConfig, state: Optional[RunState]) -> Checkpoint:
    if state is None:
        empty = NetParams({})
        return Checkpoint(cfg.to_text(), 0, empty, empty)
    return Checkpoint(
        cfg.to_text(), state.iteration, state.params.copy(), state.target.copy(),
        rng_states={"action": _rng_state(state.rng), "scene": _rng_state(state.scene_rng)},
        replay_summary=state.buffer.summary(),
        counters={"episodes": state.episodes, "successes": state.successes},
    )


@dataclass
class TrainResult:
    cfg: RunConfig
    state: Optional[RunState]
    metrics: List[Tuple] = field(default_factory=list)
    snapshots: Dict[int, NetParams] = field(default_factory=dict)
    seconds: float = 0.0

    def top_iterations(self, k: int = 5) -> List[int]:
        """Iterations of the ``k`` best train-dist SIM evaluations (ties favour later ones)."""
        rows = [r for r in self.metrics if r[1] == TRAIN_DIST and r[2] == Regime.SIM.value]
        rows.sort(key=lambda r: (float(r[3]), r[0]), reverse=True)
        return [r[0] for r in rows[:k]]


def train(cfg: RunConfig, out_dir: Optional[Path] = None, keep_snapshots: bool = False,
          progress: Optional[Callable[[int, EvalReport], None]] = None) -> TrainResult:
    """Run the training loop; write checkpoints and metrics when ``out_dir`` is given."""
    import time

    t0 = time.perf_counter()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    state = init_run(cfg.seed, cfg.method, cfg.iterations, cfg.workspace, cfg.net, cfg.learner) \
        if cfg.trainable else None
    result = TrainResult(cfg, state)
    metrics_path = out_dir / "metrics.csv" if out_dir is not None else None
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_HEADER)
    if out_dir is not None:
        save_checkpoint(out_dir / "ckpt_000000.bin", make_checkpoint(cfg, state))

    def record(iteration: int, params: Optional[NetParams]) -> None:
        rep = evaluate_policy(policy_for(cfg, params), cfg, TRAIN_DIST, Regime.SIM, seed=cfg.seed)
        result.metrics.append(rep.row(iteration))
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as f:
                csv.writer(f).writerow(rep.row(iteration))
        if progress is not None:
            progress(iteration, rep)

    if state is None:
        if cfg.iterations > 0:
            record(0, None)
    else:
        while state.iteration < cfg.iterations:
            try:
                train_step(state)
            except DivergenceError as exc:
                raise DivergenceError(f"diverged at iteration {state.iteration + 1}: {exc}") from exc
            if state.iteration % cfg.eval_every == 0:
                snap = state.params.copy()
                if keep_snapshots:
                    result.snapshots[state.iteration] = snap
                record(state.iteration, snap)
                if out_dir is not None:
                    save_checkpoint(out_dir / f"ckpt_{state.iteration:06d}.bin", make_checkpoint(cfg, state))
        if out_dir is not None and cfg.iterations > 0:
            save_checkpoint(out_dir / "final.bin", make_checkpoint(cfg, state))
    result.seconds = time.perf_counter() - t0
    return result


# --------------------------------------------------------------------------
# images


def heatmap_rgb(q: np.ndarray) -> np.ndarray:
    """Min-max normalised grey-to-red ramp, uint8 (H, W, 3); constant maps are uniform grey."""
    q = np.asarray(q, dtype=float)
    lo, hi = float(q.min()), float(q.max())
    v = np.zeros_like(q) if hi <= lo else (q - lo) / (hi - lo)
    rgb = (1.0 - v)[..., None] * RAMP_LOW + v[..., None] * RAMP_HIGH
    return np.round(rgb).astype(np.uint8)


def zoom_image(img: np.ndarray, zoom: int) -> np.ndarray:
    return np.repeat(np.repeat(img, zoom, axis=0), zoom, axis=1)


def mask_overlay(rgb: np.ndarray, mask: np.ndarray, dim: float = 0.35) -> np.ndarray:
    """Off-mask cells darkened so the object region stands out."""
    out = rgb.astype(float)
    out[~mask] *= dim
    return np.round(out).astype(np.uint8)


def draw_marker(img: np.ndarray, i: int, j: int, zoom: int) -> np.ndarray:
    """Hollow square around cell (i, j) of a zoomed image."""
    out = img.copy()
    y0, x0 = j * zoom, i * zoom
    y1, x1 = y0 + zoom - 1, x0 + zoom - 1
    out[y0, x0:x1 + 1] = MARKER_RGB
    out[y1, x0:x1 + 1] = MARKER_RGB
    out[y0:y1 + 1, x0] = MARKER_RGB
    out[y0:y1 + 1, x1] = MARKER_RGB
    return out


def write_ppm(path, rgb: np.ndarray) -> Path:
    path = Path(path)
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.tobytes())
    return path


def read_pnm(path) -> np.ndarray:
    """Reader for the binary P5/P6 files written here."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    kind, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255 or kind not in (b"P5", b"P6"):
        raise ValueError("unsupported pixmap")
    ch = 3 if kind == b"P6" else 1
    pix = np.frombuffer(data[-w * h * ch:], dtype=np.uint8)
    return pix.reshape(h, w, 3) if ch == 3 else pix.reshape(h, w)


def cmd_viz(ckpt: Checkpoint, scene_seed: int, out_dir, suite: str = UNSEEN_WALLS) -> List[Path]:
    from .render import write_pgm

    cfg = ckpt.config
    ws = cfg.workspace
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = SUITES[suite][1](scene_seed, ws)
    obs = render_observation(scene, ws)
    masks = object_masks(scene, ws)
    if cfg.trainable:
        q = q_values(ckpt.params, obs, cfg.net, ws)
    else:
        q = np.zeros((ws.n_rotations, ws.action_grid, ws.action_grid))
    best = greedy_action(q)
    files = [write_pgm(out_dir / "obs_height.pgm", obs[0]), write_pgm(out_dir / "obs_intensity.pgm", obs[1])]
    for r, phi in enumerate(ws.rotations):
        heat = zoom_image(heatmap_rgb(q[r]), cfg.zoom)
        over = zoom_image(mask_overlay(heatmap_rgb(q[r]), masks[r]), cfg.zoom)
        if r == best.phi_idx:
            heat = draw_marker(heat, best.i, best.j, cfg.zoom)
            over = draw_marker(over, best.i, best.j, cfg.zoom)
        tag = f"rot{int(round(phi)):03d}"
        files.append(write_ppm(out_dir / f"qmap_{tag}.ppm", heat))
        files.append(write_ppm(out_dir / f"overlay_{tag}.ppm", over))
    return files
