"""Proportional prioritized experience replay backed by a sum tree."""

from __future__ import annotations

from typing import Any, List, Optional, Tuple

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves; internal nodes hold subtree sums."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.tree = np.zeros(2 * capacity - 1)

    def update(self, index: int, value: float) -> None:
        node = index + self.capacity - 1
        change = value - self.tree[node]
        self.tree[node] = value
        while node > 0:
            node = (node - 1) // 2
            self.tree[node] += change

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def leaf(self, index: int) -> float:
        return float(self.tree[index + self.capacity - 1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity - 1:]

    def find(self, mass: float) -> int:
        """Leaf index whose cumulative-sum interval contains ``mass``."""
        node = 0
        while node < self.capacity - 1:
            left = 2 * node + 1
            if mass < self.tree[left] or self.tree[left + 1] <= 0.0:
                node = left
            else:
                mass -= self.tree[left]
                node = left + 1
        return node - (self.capacity - 1)


class PrioritizedReplay:
    """Ring buffer with sampling probability proportional to stored priority.

    Priorities are stored already exponentiated: ``(|td| + eps) ** alpha``.
    New items enter at the current maximum priority.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, eps: float = 1e-3):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.data: List[Any] = [None] * capacity
        self.next = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def insert(self, item: Any) -> int:
        idx = self.next
        self.data[idx] = item
        self.tree.update(idx, self.max_priority)
        self.next = (self.next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return idx

    def set_priority(self, idx: int, priority: float) -> None:
        if priority < 0 or not np.isfinite(priority):
            raise ValueError(f"invalid priority {priority}")
        self.tree.update(idx, priority)
        self.max_priority = max(self.max_priority, priority)

    def update_priority(self, idx: int, td_error: float) -> None:
        self.set_priority(idx, (abs(float(td_error)) + self.eps) ** self.alpha)

    def probability(self, idx: int) -> float:
        return self.tree.leaf(idx) / self.tree.total

    def sample(self, rng: np.random.Generator, beta: float) -> Tuple[int, Any, float]:
        """Draw one item; returns (index, item, importance weight normalised by the max weight)."""
        if self.size == 0:
            raise IndexError("cannot sample from an empty replay buffer")
        total = self.tree.total
        if total <= 0.0:
            raise ValueError("all stored priorities are zero")
        idx = self.tree.find(rng.uniform(0.0, total))
        idx = min(idx, self.size - 1)
        live = self.tree.leaves()[: self.size]
        p_min = live[live > 0].min() / total
        p = self.tree.leaf(idx) / total
        weight = (p_min / p) ** beta
        return idx, self.data[idx], float(weight)

    def summary(self) -> dict:
        live = self.tree.leaves()[: self.size]
        return {
            "size": self.size,
            "capacity": self.capacity,
            "next": self.next,
            "max_priority": float(self.max_priority),
            "priority_sum": float(live.sum()) if self.size else 0.0,
            "priority_mean": float(live.mean()) if self.size else 0.0,
        }
