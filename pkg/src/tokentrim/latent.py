"""Latent token grids, chunk summaries and per-token drift.

A chunk of ``F`` frames is encoded frame by frame into ``N x D`` token grids,
averaged over time into a :class:`LatentSummary`, and two consecutive
summaries are compared token by token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, EmptyChunkError, FiniteError, ShapeError


@dataclass(frozen=True)
class TokenGridShape:
    """Number of spatial tokens ``n_tokens`` and latent width ``dim``."""

    n_tokens: int
    dim: int

    def __post_init__(self):
        if int(self.n_tokens) < 1 or int(self.dim) < 1:
            raise ShapeError(f"token grid must be at least 1x1, got {self.n_tokens}x{self.dim}")


def _frozen_matrix(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be a 2-D (tokens x dim) matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise FiniteError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameLatent:
    """Token grid of one encoded frame; row ``i`` is token ``i``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_matrix(self.values, "frame latent"))

    @property
    def shape(self) -> TokenGridShape:
        return TokenGridShape(*self.values.shape)


@dataclass(frozen=True)
class LatentSummary:
    """Time-averaged token grid of one chunk."""

    values: np.ndarray
    source_step: int
    frame_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_matrix(self.values, "latent summary"))
        if self.frame_count < 1:
            raise ShapeError(f"frame_count must be >= 1, got {self.frame_count}")

    @property
    def shape(self) -> TokenGridShape:
        return TokenGridShape(*self.values.shape)


class Encoder(Protocol):
    """Maps one frame payload to an ``N x D`` array."""

    def encode(self, frame) -> np.ndarray: ...


class IdentityEncoder:
    """Pass-through for payloads that are already token grids."""

    def encode(self, frame) -> np.ndarray:
        return np.asarray(frame, dtype=np.float64)


@dataclass
class PatchifyEncoder:
    """Splits an ``H x W x C`` image into non-overlapping square patches.

    Patches are taken in row-major order and each is flattened in
    ``(row, col, channel)`` order, giving ``(H/p)*(W/p)`` tokens of width
    ``p*p*C``. An optional ``projection`` (``p*p*C x D``) maps the flattened
    patch to the latent width.
    """

    patch: int
    projection: np.ndarray | None = None

    def encode(self, frame) -> np.ndarray:
        img = np.asarray(frame, dtype=np.float64)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.ndim != 3:
            raise ShapeError(f"expected an HxWxC image, got shape {img.shape}")
        h, w, c = img.shape
        p = self.patch
        if p < 1 or h % p or w % p:
            raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")
        tokens = (
            img.reshape(h // p, p, w // p, p, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape((h // p) * (w // p), p * p * c)
        )
        if self.projection is not None:
            tokens = tokens @ np.asarray(self.projection, dtype=np.float64)
        return tokens


def encode_frame(frame, encoder: Encoder, shape: TokenGridShape) -> FrameLatent:
    """Encode one frame and check it against the stream's token grid.

    Raises:
        ShapeError: encoder output is not ``shape.n_tokens x shape.dim``.
        FiniteError: encoder output contains NaN or Inf.
    """
    out = np.asarray(encoder.encode(frame), dtype=np.float64)
    if out.shape != (shape.n_tokens, shape.dim):
        raise ShapeError(
            f"encoder produced {out.shape}, stream expects ({shape.n_tokens}, {shape.dim})"
        )
    return FrameLatent(out)


def summarize_chunk(frames: Sequence[FrameLatent], step: int) -> LatentSummary:
    """Average a chunk's frame latents over time."""
    if len(frames) == 0:
        raise EmptyChunkError(f"chunk at step {step} has no frames")
    shape = frames[0].values.shape
    for f in frames[1:]:
        if f.values.shape != shape:
            raise ShapeError(f"frame shapes differ within chunk: {shape} vs {f.values.shape}")
    first = frames[0].values
    # mean taken as an offset from the first frame: identical frames average exactly
    offsets = np.stack([f.values - first for f in frames])
    return LatentSummary(first + offsets.mean(axis=0), source_step=step, frame_count=len(frames))


def per_token_drift(curr: LatentSummary, prev: LatentSummary) -> np.ndarray:
    """Euclidean distance between corresponding token rows of two summaries."""
    if curr.values.shape != prev.values.shape:
        raise ShapeError(f"summary shapes differ: {curr.values.shape} vs {prev.values.shape}")
    return np.linalg.norm(curr.values - prev.values, axis=1)


def unstable_count(fraction: float, n_tokens: int) -> int:
    """``ceil(fraction * n_tokens)``, robust to float products like ``0.1 * 30``.

    Raises:
        ConfigError: fraction outside (0, 1), or the count would cover every token.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"pruning fraction must lie in (0, 1), got {fraction}", "fraction")
    k = math.ceil(round(fraction * n_tokens, 9))
    if k >= n_tokens:
        raise ConfigError(
            f"fraction {fraction} selects all {n_tokens} tokens; no context would remain",
            "fraction",
        )
    return k


@dataclass(frozen=True)
class DriftProfile:
    """Per-token drift, the top-drift token set and its mean severity.

    ``selected`` holds token indices ordered by decreasing drift, ties broken
    by lower index first.
    """

    per_token: np.ndarray
    selected: tuple[int, ...]
    severity: float
    fraction: float

    def keep_mask(self) -> np.ndarray:
        """Boolean mask over tokens, ``False`` at every selected index."""
        mask = np.ones(len(self.per_token), dtype=bool)
        mask[list(self.selected)] = False
        return mask


def build_drift_profile(drift, fraction: float) -> DriftProfile:
    """Select the ``ceil(fraction * N)`` highest-drift tokens and average them."""
    d = np.array(drift, dtype=np.float64, copy=True)
    if d.ndim != 1 or d.size == 0:
        raise ShapeError(f"drift must be a nonempty vector, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise FiniteError("drift vector contains non-finite entries")
    if np.any(d < 0):
        raise ValueError("drift scores must be nonnegative")
    k = unstable_count(fraction, d.size)
    # stable sort on negated scores keeps lower indices first among ties
    order = np.argsort(-d, kind="stable")[:k]
    d.setflags(write=False)
    return DriftProfile(
        per_token=d,
        selected=tuple(int(i) for i in order),
        severity=float(d[order].mean()),
        fraction=fraction,
    )
