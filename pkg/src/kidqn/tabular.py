"""Exact small-MDP oracles: value iteration plus tabular vanilla and masked Q-learning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class TinyMDP:
    next_state: np.ndarray  # (S, A) int
    reward: np.ndarray      # (S, A) in {0, 1}
    terminal: np.ndarray    # (S,) bool
    gamma: float = 0.95

    def __post_init__(self):
        ns = np.asarray(self.next_state)
        s, a = ns.shape
        if self.reward.shape != (s, a) or self.terminal.shape != (s,):
            raise ValueError("table shapes disagree")
        if ns.min() < 0 or ns.max() >= s:
            raise ValueError("transition leaves the state space")
        if not np.isin(self.reward, (0, 1)).all():
            raise ValueError("rewards must be 0 or 1")
        for t in np.flatnonzero(self.terminal):
            if not (np.all(ns[t] == t) and np.all(self.reward[t] == 0)):
                raise ValueError(f"terminal state {t} must self-loop with zero reward")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]

    @classmethod
    def chain(cls, length: int = 3, gamma: float = 0.95) -> "TinyMDP":
        """``length`` states plus a terminal; action 0 advances, action 1 stays.

        Reward 1 is paid on the transition into the terminal state.
        """
        s = length + 1
        ns = np.zeros((s, 2), dtype=int)
        r = np.zeros((s, 2), dtype=int)
        for i in range(length):
            ns[i] = (i + 1, i)
        ns[length] = length
        r[length - 1, 0] = 1
        term = np.zeros(s, dtype=bool)
        term[length] = True
        return cls(ns, r, term, gamma)

    def backup(self, q: np.ndarray) -> np.ndarray:
        v = np.where(self.terminal, 0.0, q.max(axis=1))
        out = self.reward + self.gamma * v[self.next_state]
        out[self.terminal] = 0.0
        return out


def value_iteration(mdp: TinyMDP, tol: float = 1e-12, max_iter: int = 100_000,
                    history: Optional[list] = None) -> np.ndarray:
    """Iterate the Bellman optimality backup until the sup-norm residual is at most ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        new = mdp.backup(q)
        res = float(np.abs(new - q).max())
        if history is not None:
            history.append(res)
        q = new
        if res <= tol:
            break
    return q


def harmonic_step(n: float, c: float = 5.0) -> float:
    """Step size c / (c + n - 1) for the n-th visit; c = 1 gives plain 1/n.

    Larger c forgets the stale early targets faster while keeping the
    Robbins-Monro conditions.
    """
    return c / (c + n - 1.0)


def _start_state(mdp: TinyMDP, rng: np.random.Generator) -> int:
    live = np.flatnonzero(~mdp.terminal)
    return int(live[rng.integers(len(live))])


def tabular_ki_q_learning(mdp: TinyMDP, masks: np.ndarray, steps: int, seed: int = 0, epsilon: float = 0.3,
                          q_init: float = 0.0, episode_cap: int = 20, step_scale: float = 5.0,
                          trajectory: Optional[list] = None) -> np.ndarray:
    """Masked Q-learning with a table in place of the network.

    Acting is restricted to on-mask actions. Each step moves the executed
    entry toward its TD target and every off-mask entry of the visited
    state toward 0, all with harmonic step sizes.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("mask table shape disagrees with the MDP")
    empty = ~masks.any(axis=1) & ~mdp.terminal
    if empty.any():
        raise ValueError(f"non-terminal states with empty mask: {np.flatnonzero(empty).tolist()}")
    rng = np.random.default_rng(seed)
    q = np.full((mdp.n_states, mdp.n_actions), float(q_init))
    q[mdp.terminal] = 0.0
    counts = np.zeros_like(q)
    s, t_ep = _start_state(mdp, rng), 0
    for _ in range(steps):
        allowed = np.flatnonzero(masks[s])
        if rng.random() < epsilon:
            a = int(allowed[rng.integers(len(allowed))])
        else:
            a = int(allowed[np.argmax(q[s, allowed])])
        s2 = int(mdp.next_state[s, a])
        r = float(mdp.reward[s, a])
        y = r if mdp.terminal[s2] else r + mdp.gamma * q[s2].max()
        for b in np.flatnonzero(~masks[s]):
            if b == a:
                continue
            counts[s, b] += 1
            q[s, b] += harmonic_step(counts[s, b], step_scale) * (0.0 - q[s, b])
        counts[s, a] += 1
        q[s, a] += harmonic_step(counts[s, a], step_scale) * (y - q[s, a])
        if trajectory is not None:
            trajectory.append(q.copy())
        t_ep += 1
        if mdp.terminal[s2] or t_ep >= episode_cap:
            s, t_ep = _start_state(mdp, rng), 0
        else:
            s = s2
    return q


def tabular_q_learning(mdp: TinyMDP, steps: int, seed: int = 0, epsilon: float = 0.3, q_init: float = 0.0,
                       episode_cap: int = 20, step_scale: float = 5.0,
                       trajectory: Optional[list] = None) -> np.ndarray:
    """Vanilla one-step Q-learning with harmonic step sizes and epsilon-greedy behaviour."""
    rng = np.random.default_rng(seed)
    q = np.full((mdp.n_states, mdp.n_actions), float(q_init))
    q[mdp.terminal] = 0.0
    counts = np.zeros_like(q)
    s, t_ep = _start_state(mdp, rng), 0
    for _ in range(steps):
        if rng.random() < epsilon:
            a = int(rng.integers(mdp.n_actions))
        else:
            a = int(np.argmax(q[s]))
        s2 = int(mdp.next_state[s, a])
        r = float(mdp.reward[s, a])
        y = r if mdp.terminal[s2] else r + mdp.gamma * q[s2].max()
        counts[s, a] += 1
        q[s, a] += harmonic_step(counts[s, a], step_scale) * (y - q[s, a])
        if trajectory is not None:
            trajectory.append(q.copy())
        t_ep += 1
        if mdp.terminal[s2] or t_ep >= episode_cap:
            s, t_ep = _start_state(mdp, rng), 0
        else:
            s = s2
    return q
