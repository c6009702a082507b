"""Vanilla DQN and knowledge-induced DQN updates, momentum SGD and the online training step."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .core import Action, WorkspaceConfig
from .qfunc import (
    DivergenceError,
    NetConfig,
    NetParams,
    backward,
    forward,
    greedy_action,
    init_params,
    param_group,
    q_values,
)
from .render import object_masks, render_observation
from .replay import PrioritizedReplay
from .sim import OutcomeKind, Regime, SceneGenerationError, execute_sag, generate_training_scene

DQN = "dqn"
KI_DQN = "ki-dqn"
TRAINABLE_METHODS = (DQN, KI_DQN)


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.95
    lr_trunk: float = 1e-5
    lr_head: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 2e-5
    target_sync_every: int = 200
    replay_capacity: int = 2000
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_eps: float = 1e-3
    eps_start: float = 0.5
    eps_end: float = 0.1
    eps_fraction: float = 0.2
    loss_normalization: str = "mean"  # "mean", "sum" or "split"
    off_mask_weight: float = 1.0  # total weight of the non-executed terms under "split"
    executed_off_mask: str = "td"  # target of an executed off-mask cell: "td" or "zero"
    episode_cap: int = 15

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.lr_trunk, self.lr_head) <= 0 or self.target_sync_every < 1 or self.replay_capacity < 1:
            raise ValueError("learning rates, sync period and replay capacity must be positive")
        if self.loss_normalization not in ("mean", "sum", "split"):
            raise ValueError(f"unknown loss normalization {self.loss_normalization!r}")
        if self.executed_off_mask not in ("td", "zero"):
            raise ValueError(f"unknown executed_off_mask rule {self.executed_off_mask!r}")

    def lr(self, name: str) -> float:
        return self.lr_trunk if param_group(name) == "trunk" else self.lr_head


@dataclass
class Transition:
    obs: np.ndarray
    action: Action
    reward: int
    next_obs: np.ndarray
    terminal: bool
    masks: np.ndarray
    priority: float = 0.0

    def __post_init__(self):
        if self.reward == 1 and not self.terminal:
            raise ValueError("a rewarded transition must be terminal")


def linear_schedule(start: float, end: float, iteration: int, horizon: float) -> float:
    if horizon <= 0:
        return end
    frac = min(max(iteration / horizon, 0.0), 1.0)
    return start + frac * (end - start)


def epsilon_at(cfg: LearnerConfig, iteration: int, total: int) -> float:
    return linear_schedule(cfg.eps_start, cfg.eps_end, iteration, cfg.eps_fraction * total)


def beta_at(cfg: LearnerConfig, iteration: int, total: int) -> float:
    return linear_schedule(cfg.per_beta_start, cfg.per_beta_end, iteration, total)


# --------------------------------------------------------------------------
# targets and gradients


def dqn_target(t: Transition, target_params: NetParams, net_cfg: NetConfig, ws: WorkspaceConfig,
               gamma: float) -> float:
    if t.terminal:
        return float(t.reward)
    q_next = q_values(target_params, t.next_obs, net_cfg, ws)
    if not np.all(np.isfinite(q_next)):
        raise DivergenceError("non-finite value in target network output")
    return float(t.reward + gamma * q_next.max())


def dqn_target_map(t: Transition, qmaps: np.ndarray, td_target: float):
    """Single-cell target: only the executed action contributes."""
    n = qmaps.shape[-1]
    targets = np.zeros_like(qmaps)
    contrib = np.zeros(qmaps.shape, dtype=bool)
    idx = np.unravel_index(t.action.flat(n), qmaps.shape)
    targets[idx] = td_target
    contrib[idx] = True
    return targets, contrib


def ki_target_map(t: Transition, qmaps: np.ndarray, td_target: float, executed_off_mask: str = "td"):
    """Per-cell targets of the knowledge-induced update.

    Off-mask cells regress to 0; on-mask cells other than the executed one
    keep their current prediction (and so are left out of the contribution
    mask); the executed cell takes the TD target. With
    ``executed_off_mask="zero"`` an executed cell that lies off the mask
    keeps the zero target instead.
    """
    masks = np.asarray(t.masks, dtype=bool)
    if masks.shape != qmaps.shape:
        raise ValueError(f"mask shape {masks.shape} != Q shape {qmaps.shape}")
    targets = np.where(masks, qmaps, 0.0)
    contrib = ~masks
    idx = np.unravel_index(t.action.flat(qmaps.shape[-1]), qmaps.shape)
    if masks[idx] or executed_off_mask == "td":
        targets[idx] = td_target
    contrib[idx] = True
    return targets, contrib


def loss_and_grad_map(qmaps, targets, contrib, normalization: str = "mean", executed=None,
                      off_weight: float = 1.0):
    """Squared TD loss over contributing cells and its gradient with respect to the Q maps.

    ``mean`` divides every term by the number of contributing cells, ``sum``
    leaves them raw, and ``split`` keeps the executed cell's term at full
    weight while the remaining terms share a total weight ``off_weight``.
    """
    count = int(contrib.sum())
    if count == 0:
        raise ValueError("empty contribution set")
    weight = np.where(contrib, 1.0, 0.0)
    if normalization == "mean":
        weight /= count
    elif normalization == "split":
        if executed is None:
            raise ValueError("split normalization needs the executed cell")
        if count > 1:
            weight *= off_weight / (count - 1)
        weight[executed] = 1.0
    elif normalization != "sum":
        raise ValueError(f"unknown loss normalization {normalization!r}")
    diff = np.where(contrib, qmaps - targets, 0.0)
    return float((weight * diff ** 2).sum()), 2.0 * weight * diff


def compute_gradients(params: NetParams, cache, qmaps, targets, contrib, action: Action,
                      normalization: str = "mean", off_weight: float = 1.0):
    """Semi-gradient of the masked squared loss; also returns the executed cell's TD error."""
    idx = np.unravel_index(action.flat(qmaps.shape[-1]), qmaps.shape)
    loss, gmap = loss_and_grad_map(qmaps, targets, contrib, normalization, idx, off_weight)
    grads = backward(params, cache, gmap)
    td = float(targets[idx] - qmaps[idx])
    return grads, td, loss


def apply_update(params: NetParams, grads: Dict[str, np.ndarray], cfg: LearnerConfig,
                 scale: float = 1.0) -> NetParams:
    """Momentum SGD, per-group learning rates, L2 decay folded into the gradient. In place."""
    for k in params.keys():
        if not np.all(np.isfinite(grads[k])):
            raise DivergenceError(f"non-finite gradient for {k}")
    for k in params.keys():
        w = params.weights[k]
        g = scale * grads[k] + cfg.weight_decay * w
        v = params.momentum[k]
        v *= cfg.momentum
        v += g
        w -= cfg.lr(k) * v
    return params


# --------------------------------------------------------------------------
# online training


@dataclass
class RunState:
    ws: WorkspaceConfig
    net_cfg: NetConfig
    cfg: LearnerConfig
    method: str
    total_iterations: int
    params: NetParams
    target: NetParams
    buffer: PrioritizedReplay
    rng: np.random.Generator
    scene_rng: np.random.Generator
    scene: object = None
    obs: Optional[np.ndarray] = None
    masks: Optional[np.ndarray] = None
    iteration: int = 0
    episode_steps: int = 0
    episodes: int = 0
    successes: int = 0
    last_loss: float = 0.0


def _new_scene(state: RunState) -> None:
    while True:
        seed = int(state.scene_rng.integers(0, 2**31 - 1))
        try:
            state.scene = generate_training_scene(seed, state.ws)
            break
        except SceneGenerationError:
            continue
    state.obs = render_observation(state.scene, state.ws)
    state.masks = object_masks(state.scene, state.ws)
    state.episode_steps = 0


def init_run(seed: int, method: str, total_iterations: int, ws: WorkspaceConfig,
             net_cfg: NetConfig = NetConfig(), cfg: LearnerConfig = LearnerConfig()) -> RunState:
    if method not in TRAINABLE_METHODS:
        raise ValueError(f"method {method!r} is not trainable")
    net_cfg.check(ws)
    ss = np.random.SeedSequence(seed)
    s_param, s_act, s_scene = ss.spawn(3)
    params = init_params(int(s_param.generate_state(1)[0]), net_cfg)
    state = RunState(
        ws=ws, net_cfg=net_cfg, cfg=cfg, method=method, total_iterations=total_iterations,
        params=params, target=params.copy(),
        buffer=PrioritizedReplay(cfg.replay_capacity, cfg.per_alpha, cfg.per_eps),
        rng=np.random.default_rng(s_act), scene_rng=np.random.default_rng(s_scene),
    )
    _new_scene(state)
    return state


def select_action(qmaps: Optional[np.ndarray], rng: np.random.Generator, epsilon: float, n_actions: int,
                  n: int) -> Action:
    """Epsilon-greedy over the whole action grid."""
    if rng.random() < epsilon or qmaps is None:
        return Action.from_flat(int(rng.integers(n_actions)), n)
    return greedy_action(qmaps)


def _learn(state: RunState, t: Transition, weight: float) -> float:
    q, cache = forward(state.params, t.obs, state.net_cfg, state.ws)
    y = dqn_target(t, state.target, state.net_cfg, state.ws, state.cfg.gamma)
    if state.method == KI_DQN:
        targets, contrib = ki_target_map(t, q, y, state.cfg.executed_off_mask)
    else:
        targets, contrib = dqn_target_map(t, q, y)
    grads, td, loss = compute_gradients(state.params, cache, q, targets, contrib, t.action,
                                        state.cfg.loss_normalization, state.cfg.off_mask_weight)
    apply_update(state.params, grads, state.cfg, scale=weight)
    state.last_loss = loss
    return td


def train_step(state: RunState) -> RunState:
    ws, cfg = state.ws, state.cfg
    eps = epsilon_at(cfg, state.iteration, state.total_iterations)
    explore = state.rng.random() < eps
    if explore:
        a = Action.from_flat(int(state.rng.integers(ws.n_actions)), ws.action_grid)
    else:
        a = greedy_action(q_values(state.params, state.obs, state.net_cfg, ws))

    out = execute_sag(state.scene, a, Regime.SIM, ws)
    terminal = out.kind is OutcomeKind.GRASP_SUCCESS
    if out.new_scene is state.scene:
        next_obs = state.obs
    else:
        next_obs = render_observation(out.new_scene, ws)
    t = Transition(state.obs, a, out.reward, next_obs, terminal, state.masks)

    t.priority = abs(_learn(state, t, 1.0))
    state.buffer.insert(t)
    idx, replayed, w = state.buffer.sample(state.rng, beta_at(cfg, state.iteration, state.total_iterations))
    td = _learn(state, replayed, w)
    state.buffer.update_priority(idx, td)
    replayed.priority = state.buffer.tree.leaf(idx)

    state.iteration += 1
    if state.iteration % cfg.target_sync_every == 0:
        state.target = state.params.copy()

    state.episode_steps += 1
    if terminal or state.episode_steps >= cfg.episode_cap:
        state.episodes += 1
        state.successes += int(terminal)
        _new_scene(state)
    else:
        state.scene = out.new_scene
        state.obs = next_obs
        state.masks = object_masks(out.new_scene, ws) if next_obs is not t.obs else t.masks
    return state
