"""Temporal key/value cache with spatial-index hard pruning.

Each cached chunk keeps all ``N`` key/value rows plus an ``alive`` vector.
Pruning flips ``alive`` bits and never touches storage; compaction happens
when the context is assembled for attention. Two layouts are supported:

* :class:`Rolling` keeps the last ``window`` chunks, all of them prunable.
* :class:`AnchorRecent` pins the first ``anchors`` chunks permanently and
  rolls a window of ``recent`` chunks behind them. Only the recent chunks
  can be pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import ConfigError, EmptyContextError, ShapeError


@dataclass(frozen=True)
class Rolling:
    window: int = 4

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"must be >= 1, got {self.window}", "layout.window")


@dataclass(frozen=True)
class AnchorRecent:
    anchors: int = 1
    recent: int = 3

    def __post_init__(self):
        if self.anchors < 0:
            raise ConfigError(f"must be >= 0, got {self.anchors}", "layout.anchors")
        if self.recent < 1:
            raise ConfigError(f"must be >= 1, got {self.recent}", "layout.recent")


Layout = Union[Rolling, AnchorRecent]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CacheEntry:
    chunk_step: int
    keys: np.ndarray
    values: np.ndarray
    alive: np.ndarray
    anchor: bool = False

    @property
    def alive_count(self) -> int:
        return int(self.alive.sum())


@dataclass(frozen=True)
class PruneMask:
    """Keep-mask over spatial token indices; ``False`` marks a pruned token."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.ndim != 1:
            raise ShapeError(f"prune mask must be a vector, got shape {m.shape}")
        object.__setattr__(self, "mask", _readonly(m))

    @classmethod
    def from_indices(cls, indices, n_tokens: int) -> "PruneMask":
        m = np.ones(n_tokens, dtype=bool)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n_tokens):
            raise ShapeError(f"prune index out of range [0, {n_tokens})")
        m[idx] = False
        return cls(m)

    @property
    def pruned(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


@dataclass(frozen=True)
class KVCache:
    """Immutable cache value; every operation returns a new cache.

    Keys are ``n_tokens x head_dim`` and values ``n_tokens x value_dim`` per
    chunk. Arrays are shared between successive cache values, never copied.
    """

    layout: Layout
    n_tokens: int
    head_dim: int
    value_dim: int
    entries: tuple[CacheEntry, ...] = ()

    def __post_init__(self):
        if self.n_tokens < 1 or self.head_dim < 1 or self.value_dim < 1:
            raise ShapeError("cache dimensions must be positive")

    def __len__(self):
        return len(self.entries)

    @property
    def steps(self) -> list[int]:
        return [e.chunk_step for e in self.entries]

    def alive_rows(self) -> int:
        return sum(e.alive_count for e in self.entries)

    def prunable(self, entry: CacheEntry) -> bool:
        return not entry.anchor

    def _check_kv(self, keys, values, full_grid: bool = True):
        """Validate widths; ``full_grid`` also requires exactly ``n_tokens`` rows."""
        k = np.asarray(keys, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if k.ndim != 2 or k.shape[1] != self.head_dim or (full_grid and k.shape[0] != self.n_tokens):
            rows = self.n_tokens if full_grid else "any"
            raise ShapeError(f"keys shape {k.shape} incompatible with ({rows}, {self.head_dim})")
        if v.ndim != 2 or v.shape != (k.shape[0], self.value_dim):
            raise ShapeError(
                f"values shape {v.shape} incompatible with ({k.shape[0]}, {self.value_dim})"
            )
        return k, v

    def append(self, keys, values, step: int) -> "KVCache":
        """Append one chunk with every token alive, evicting per layout."""
        k, v = self._check_kv(keys, values)
        entries = list(self.entries)
        if isinstance(self.layout, AnchorRecent):
            n_anchor = sum(e.anchor for e in entries)
            is_anchor = n_anchor < self.layout.anchors
            entries.append(self._entry(k, v, step, anchor=is_anchor))
            anchors = [e for e in entries if e.anchor]
            recent = [e for e in entries if not e.anchor]
            entries = anchors + recent[max(0, len(recent) - self.layout.recent):]
        else:
            entries.append(self._entry(k, v, step, anchor=False))
            entries = entries[max(0, len(entries) - self.layout.window):]
        return replace(self, entries=tuple(entries))

    def _entry(self, k, v, step, anchor):
        return CacheEntry(
            chunk_step=step,
            keys=_readonly(k.copy()),
            values=_readonly(v.copy()),
            alive=_readonly(np.ones(self.n_tokens, dtype=bool)),
            anchor=anchor,
        )

    def apply_prune(self, mask: PruneMask) -> "KVCache":
        """Drop the masked spatial indices from every prunable chunk, persistently."""
        if not isinstance(mask, PruneMask):
            mask = PruneMask(mask)
        if mask.mask.shape != (self.n_tokens,):
            raise ShapeError(f"mask length {mask.mask.shape[0]} != n_tokens {self.n_tokens}")
        entries = tuple(
            replace(e, alive=_readonly(e.alive & mask.mask)) if self.prunable(e) else e
            for e in self.entries
        )
        return replace(self, entries=entries)

    def cached_context(self) -> tuple[np.ndarray, np.ndarray]:
        """Alive cached rows in entry order, without current tokens."""
        if not self.entries:
            return np.empty((0, self.head_dim)), np.empty((0, self.value_dim))
        ks = [e.keys[e.alive] for e in self.entries]
        vs = [e.values[e.alive] for e in self.entries]
        return np.concatenate(ks), np.concatenate(vs)

    def assemble_context(self, k_curr, v_curr) -> tuple[np.ndarray, np.ndarray]:
        """Current tokens followed by every alive cached token, in entry order."""
        kc, vc = self._check_kv(k_curr, v_curr, full_grid=False)
        k_cache, v_cache = self.cached_context()
        return np.concatenate([kc, k_cache]), np.concatenate([vc, v_cache])


def empty_cache(layout: Layout, n_tokens: int, head_dim: int, value_dim: int) -> KVCache:
    return KVCache(layout=layout, n_tokens=n_tokens, head_dim=head_dim, value_dim=value_dim)


def attention(q, K, V, d: int | None = None) -> np.ndarray:
    """Scaled dot-product attention ``softmax(q K^T / sqrt(d)) V``.

    Row softmax uses max subtraction. ``d`` defaults to the key width.

    Raises:
        EmptyContextError: ``K`` has no rows.
        ShapeError: inner dimensions disagree.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] == 0:
        raise EmptyContextError("attention context is empty; every key was pruned")
    if q.shape[1] != K.shape[1] or V.ndim != 2 or V.shape[0] != K.shape[0]:
        raise ShapeError(f"incompatible attention shapes q{q.shape} K{K.shape} V{V.shape}")
    d = K.shape[1] if d is None else d
    logits = (q @ K.T) / np.sqrt(d)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ V
