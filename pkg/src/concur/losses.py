"""Contrastive objective with a FIFO key dictionary, plus the auxiliary
temporal-distance regression.

The contrastive term is a multi-positive InfoNCE over momentum-encoder keys:
each of the group's query embeddings takes the query role in turn, the other
keys of the same group are its positives, and every queue entry is a
negative. Gradients flow only through the query embeddings; keys and queue
entries are constants by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class KeyQueue:
    """Fixed-capacity FIFO of detached unit-norm key embeddings."""

    def __init__(self, capacity: int, dim: int, dtype=np.float32):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self._buf = np.zeros((capacity, dim), dtype=dtype)
        self._cursor = 0
        self.fill = 0

    def enqueue(self, keys: np.ndarray):
        keys = np.asarray(keys)
        if keys.ndim == 1:
            keys = keys[None]
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ValueError(f"enqueue: expected (n, {self.dim}) keys, got {keys.shape}")
        n = keys.shape[0]
        if n >= self.capacity:
            self._buf[:] = keys[n - self.capacity :]
            self._cursor = 0
            self.fill = self.capacity
            return
        end = self._cursor + n
        if end <= self.capacity:
            self._buf[self._cursor : end] = keys
        else:
            split = self.capacity - self._cursor
            self._buf[self._cursor :] = keys[:split]
            self._buf[: end - self.capacity] = keys[split:]
        self._cursor = end % self.capacity
        self.fill = min(self.capacity, self.fill + n)

    def keys(self) -> np.ndarray:
        """Stored keys, oldest first; a copy, never a view into the buffer."""
        if self.fill < self.capacity:
            return self._buf[: self.fill].copy()
        return np.roll(self._buf, -self._cursor, axis=0).copy()


@dataclass
class PositiveGroup:
    """One video's clips through both towers: rho queries, rho keys."""

    queries: Tensor  # (rho, d), gradient-carrying
    keys: Tensor  # (rho, d), detached
    start_frames: np.ndarray  # (rho,) clip start frames within the source video

    def __post_init__(self):
        if self.queries.shape != self.keys.shape:
            raise ValueError(f"queries {self.queries.shape} vs keys {self.keys.shape}")
        if len(self.start_frames) != self.queries.shape[0]:
            raise ValueError("one start frame per clip required")


def _role_loss(pos: Tensor, neg: Tensor | None, inv_temp: float) -> Tensor:
    """-log( sum exp(pos/a) / sum exp([pos, neg]/a) ) for one query role."""
    pos_scaled = ad.scale(pos, inv_temp)
    if neg is None:
        all_scaled = pos_scaled
    else:
        all_scaled = ad.concat([pos_scaled, ad.scale(neg, inv_temp)])
    return ad.log_sum_exp(all_scaled) - ad.log_sum_exp(pos_scaled)


def contrastive_loss(group: PositiveGroup, queue: KeyQueue, temperature: float,
                     symmetric: bool = True) -> Tensor:
    """Multi-positive InfoNCE averaged over query roles.

    With an empty queue the numerator equals the denominator and the loss is
    exactly zero. ``symmetric=False`` keeps only the first query role (the
    plain single-query form).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rho = group.queries.shape[0]
    if rho < 2:
        raise ValueError("need at least two clips per group")

    qn = ad.l2_normalize(group.queries, axis=-1)
    kn = Tensor(_unit_rows(group.keys.data))
    pos_sims = ad.matmul(qn, Tensor(kn.data.T))  # (rho, rho)

    neg_sims = None
    if queue.fill > 0:
        neg_keys = _unit_rows(queue.keys())
        neg_sims = ad.matmul(qn, Tensor(neg_keys.T.astype(qn.dtype)))  # (rho, fill)

    inv_temp = 1.0 / temperature
    n_roles = rho if symmetric else 1
    total = None
    for i in range(n_roles):
        row = pos_sims[i]
        if i == 0:
            pos = row[1:]
        elif i == rho - 1:
            pos = row[:i]
        else:
            pos = ad.concat([row[:i], row[i + 1 :]])
        role = _role_loss(pos, neg_sims[i] if neg_sims is not None else None, inv_temp)
        total = role if total is None else total + role
    return total / n_roles


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    return arr / np.maximum(norms, 1e-12)


def context_similarity_loss(predicted, actual) -> Tensor:
    """Mean squared error between predicted and true clip-start distances."""
    if len(predicted) != len(actual):
        raise ValueError(f"{len(predicted)} predictions vs {len(actual)} targets")
    if not predicted:
        raise ValueError("need at least one pair")
    total = None
    for pred, true in zip(predicted, actual):
        term = ad.square(pred - float(true))
        total = term if total is None else total + term
    return total / len(predicted)


def concur_loss(group: PositiveGroup, queue: KeyQueue, temperature: float, cs_head,
                cs_weight: float = 1.0, distance_scale: float = 1.0,
                symmetric: bool = True) -> tuple:
    """Total objective: contrastive term plus the distance-regression term.

    ``cs_head(q, k)`` must return a scalar prediction tensor. Distance targets
    are |start_q - start_k| times ``distance_scale`` over exactly the
    (query-role, key-role) pairs the contrastive term uses. Returns
    (loss, {"contrastive": float, "context": float}).
    """
    mi = contrastive_loss(group, queue, temperature, symmetric=symmetric)

    qn = ad.l2_normalize(group.queries, axis=-1)
    kn = Tensor(_unit_rows(group.keys.data))
    rho = group.queries.shape[0]
    preds, targets = [], []
    for i in range(rho if symmetric else 1):
        for j in range(rho):
            if j == i:
                continue
            preds.append(cs_head(qn[i], kn[j]))
            targets.append(abs(float(group.start_frames[i]) - float(group.start_frames[j])) * distance_scale)
    cs = context_similarity_loss(preds, targets)

    total = mi + (ad.scale(cs, cs_weight) if cs_weight != 1.0 else cs)
    return total, {"contrastive": float(mi.data), "context": float(cs.data)}
