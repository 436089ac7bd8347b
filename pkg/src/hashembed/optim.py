# src/hashembed/optim.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Union

import numpy as np

from .embedding import RowGrad

Grad = Union[np.ndarray, RowGrad]


class RowMoments:
    """
    Adam moments for the rows of a table that have had a gradient so far.

    `keys` holds the touched row ids sorted, `slots[j]` is where row
    `keys[j]` lives in the m/v blocks. Blocks grow by doubling, so memory
    follows the touched rows, not the table.
    """

    def __init__(self, width: int, dtype=np.float64):
        self.keys = np.empty(0, dtype=np.int64)
        self.slots = np.empty(0, dtype=np.int64)
        self.m = np.zeros((0, width), dtype=dtype)
        self.v = np.zeros((0, width), dtype=dtype)
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def nbytes(self) -> int:
        return self.keys.nbytes + self.slots.nbytes + self.m.nbytes + self.v.nbytes

    def find(self, rows: np.ndarray) -> np.ndarray:
        """Slots of `rows`, -1 where a row has no moments yet."""
        rows = np.asarray(rows, dtype=np.int64)
        pos = np.searchsorted(self.keys, rows)
        hit = pos < len(self.keys)
        hit[hit] = self.keys[pos[hit]] == rows[hit]
        out = np.full(len(rows), -1, dtype=np.int64)
        out[hit] = self.slots[pos[hit]]
        return out

    def slots_for(self, rows: np.ndarray) -> np.ndarray:
        """Slots of `rows` (unique), giving zeroed moments to rows seen for the first time."""
        rows = np.asarray(rows, dtype=np.int64)
        found = self.find(rows)
        missing = found < 0
        new = rows[missing]
        if len(new):
            fresh = np.arange(self.size, self.size + len(new), dtype=np.int64)
            self._reserve(self.size + len(new))
            order = np.argsort(new, kind="stable")
            at = np.searchsorted(self.keys, new[order])
            self.keys = np.insert(self.keys, at, new[order])
            self.slots = np.insert(self.slots, at, fresh[order])
            self.size += len(new)
            found[missing] = fresh
        return found

    def _reserve(self, needed: int) -> None:
        capacity = len(self.m)
        if needed <= capacity:
            return
        capacity = max(needed, 2 * capacity, 16)
        for name in ("m", "v"):
            old = getattr(self, name)
            block = np.zeros((capacity, old.shape[1]), dtype=old.dtype)
            block[:len(old)] = old
            setattr(self, name, block)


@dataclass
class AdamState:
    """
    Adam hyperparameters and moment accumulators keyed by parameter name.

    Dense parameters get dense moments with the parameter's shape.
    Row-sparse parameters get a RowMoments that only holds touched rows.
    """
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    rows: Dict[str, RowMoments] = field(default_factory=dict)

    def moments(self, name: str, like: np.ndarray):
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]

    def row_moments(self, name: str, like: np.ndarray) -> RowMoments:
        if name not in self.rows:
            self.rows[name] = RowMoments(like.shape[1], dtype=like.dtype)
        return self.rows[name]


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, Grad]) -> None:
    """
    One Adam step with bias correction, in place.

    Dense gradients update the whole parameter. A RowGrad (rows unique)
    is the lazy variant: only those rows move, and their moments are
    corrected with the global step count.
    """
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t

    for name, grad in grads.items():
        param = params[name]
        if isinstance(grad, RowGrad):
            rows = grad.rows
            if not len(rows):
                continue
            store = state.row_moments(name, param)
            slots = store.slots_for(rows)
            g = grad.values
            m_rows = b1 * store.m[slots] + (1.0 - b1) * g
            v_rows = b2 * store.v[slots] + (1.0 - b2) * g * g
            store.m[slots] = m_rows
            store.v[slots] = v_rows
            step = state.alpha * (m_rows / bias1) / (np.sqrt(v_rows / bias2) + eps)
            param[rows] -= step.astype(param.dtype)
        else:
            m, v = state.moments(name, param)
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            step = state.alpha * (m / bias1) / (np.sqrt(v / bias2) + eps)
            param -= step.astype(param.dtype)
