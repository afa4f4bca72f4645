"""Seeded synthetic chunk generator with controllable corruption.

A linear-attention toy standing in for a video diffusion backbone. Each
step starts from a noisy draft of the previous summary and blends it with
what the draft reads from the context:

    draft = z_{t-1} + noise
    z_t   = a * readout(draft, [draft; cache]) + (1 - a) * draft

``readout`` is scaled dot-product attention from the draft's queries over
the draft's own tokens plus every alive cached token. Queries and keys
carry a fixed per-position code, so a token mostly reads its own spatial
index in earlier chunks; attending to clean history partly averages the
draft noise away. That locality is what lets pruning a spatial index cut a
corrupted conditioning token out of future readouts, and it is also why
pruning clean tokens costs fidelity.

Randomness is keyed on ``(seed, step, stream)`` so a chunk depends only on
the seed, the step, the previous summary and the cache contents.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .controller import GeneratedBatch, StreamResult
from .errors import ConfigError, ShapeError
from .kvcache import KVCache, Layout, attention, empty_cache
from .latent import FrameLatent, LatentSummary, TokenGridShape, summarize_chunk

ONE_SHOT = "one-shot"
RECURRING = "recurring-via-context"

PLAIN = "plain"
STABILIZED = "stabilized"
NOISELESS = "noiseless"

# rng stream tags
_ANCHOR, _NOISE, _JITTER, _CORRUPT, _INIT = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class CorruptionEvent:
    """Additive offset of norm ``magnitude`` on ``token_indices`` at ``step``.

    ``one-shot`` corrupts the chunk itself: its frames, summary and the
    keys/values it contributes. ``recurring-via-context`` leaves the frames
    clean and corrupts only the cached keys/values, so the damage shows up
    in later chunks that read the cache.
    """

    step: int
    token_indices: tuple[int, ...]
    magnitude: float
    persistence: str = RECURRING

    def __post_init__(self):
        object.__setattr__(self, "token_indices", tuple(int(i) for i in self.token_indices))
        if not self.token_indices:
            raise ConfigError("must be nonempty", "corruption.token_indices")
        if not self.magnitude > 0:
            raise ConfigError(f"must be > 0, got {self.magnitude}", "corruption.magnitude")
        if self.persistence not in (ONE_SHOT, RECURRING):
            raise ConfigError(f"unknown persistence {self.persistence!r}", "corruption.persistence")


@dataclass(frozen=True)
class GeneratorConfig:
    shape: TokenGridShape = field(default_factory=lambda: TokenGridShape(64, 16))
    frames_per_chunk: int = 3
    head_dim: int = 16
    seed: int = 0
    base_noise: float = 0.02
    context_mix: float = 0.6
    corruption_schedule: tuple[CorruptionEvent, ...] = ()
    frame_jitter: float = 0.005
    position_scale: float = 10.0
    latent_scale: float = 0.25
    weights_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "corruption_schedule", tuple(self.corruption_schedule))
        if not 0.0 <= self.context_mix <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.context_mix}", "generator.context_mix")
        if self.base_noise < 0:
            raise ConfigError(f"must be >= 0, got {self.base_noise}", "generator.base_noise")
        if self.frame_jitter < 0:
            raise ConfigError(f"must be >= 0, got {self.frame_jitter}", "generator.frame_jitter")
        if self.frames_per_chunk < 1:
            raise ConfigError(
                f"must be >= 1, got {self.frames_per_chunk}", "generator.frames_per_chunk"
            )
        if self.head_dim < 1:
            raise ConfigError(f"must be >= 1, got {self.head_dim}", "generator.head_dim")
        for ev in self.corruption_schedule:
            if any(i < 0 or i >= self.shape.n_tokens for i in ev.token_indices):
                raise ConfigError(
                    f"token index out of range [0, {self.shape.n_tokens})",
                    "generator.corruption_schedule",
                )


@dataclass(frozen=True)
class InitPolicy:
    """How the first chunk is produced.

    ``stabilized`` scales the first chunk's noise by
    ``stabilized_noise_scale``; ``plain`` uses the full generator noise.
    ``noiseless`` drops first-chunk noise entirely and exists to build clean
    reference trajectories.
    """

    mode: str = STABILIZED
    stabilized_noise_scale: float = 0.5

    def __post_init__(self):
        if self.mode not in (PLAIN, STABILIZED, NOISELESS):
            raise ConfigError(f"unknown init mode {self.mode!r}", "init.mode")
        if self.mode == STABILIZED and not 0.0 < self.stabilized_noise_scale <= 1.0:
            raise ConfigError(
                f"must lie in (0, 1], got {self.stabilized_noise_scale}",
                "init.stabilized_noise_scale",
            )

    @property
    def noise_scale(self) -> float:
        if self.mode == PLAIN:
            return 1.0
        if self.mode == NOISELESS:
            return 0.0
        return self.stabilized_noise_scale


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((max(rows, cols), min(rows, cols))))
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def inject_corruption(latents: np.ndarray, event: CorruptionEvent, seed: int) -> np.ndarray:
    """Add a seeded random offset of norm ``event.magnitude`` to each listed token.

    The direction per token is fixed by ``(seed, event.step)``.
    """
    z = np.array(latents, dtype=np.float64, copy=True)
    n, dim = z.shape
    idx = np.asarray(event.token_indices)
    if idx.min() < 0 or idx.max() >= n:
        raise ShapeError(f"corruption index out of range [0, {n})")
    rng = np.random.default_rng([seed, event.step, _CORRUPT])
    dirs = rng.standard_normal((n, dim))[idx]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    z[idx] += event.magnitude * dirs
    return z


class LatentGenerator:
    """Synthetic generator implementing the controller's generator port."""

    def __init__(self, cfg: GeneratorConfig):
        self.cfg = cfg
        n, dim, hd = cfg.shape.n_tokens, cfg.shape.dim, cfg.head_dim
        rng = np.random.default_rng([cfg.weights_seed, 0xC0DE])
        self.w_key = _orthonormal(rng, dim, hd)
        self.w_value = _orthonormal(rng, dim, dim)
        pos = rng.standard_normal((n, hd))
        self.positions = cfg.position_scale * pos / np.linalg.norm(pos, axis=1, keepdims=True)

    @property
    def shape(self) -> TokenGridShape:
        return self.cfg.shape

    def project(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Keys and values contributed by a summary (queries reuse the keys)."""
        return z @ self.w_key + self.positions, z @ self.w_value

    def empty_cache(self, layout: Layout) -> KVCache:
        return empty_cache(layout, self.cfg.shape.n_tokens, self.cfg.head_dim, self.cfg.shape.dim)

    def anchor(self) -> np.ndarray:
        """Clean content the first chunk is drawn around."""
        rng = np.random.default_rng([self.cfg.seed, 0, _ANCHOR])
        return self.cfg.latent_scale * rng.standard_normal(
            (self.cfg.shape.n_tokens, self.cfg.shape.dim)
        )

    def _noise(self, step: int, tag: int, scale: float) -> np.ndarray:
        rng = np.random.default_rng([self.cfg.seed, step, tag])
        return scale * rng.standard_normal((self.cfg.shape.n_tokens, self.cfg.shape.dim))

    def _frames(self, z: np.ndarray, step: int) -> tuple[FrameLatent, ...]:
        f = self.cfg.frames_per_chunk
        rng = np.random.default_rng([self.cfg.seed, step, _JITTER])
        jitter = self.cfg.frame_jitter * rng.standard_normal((f,) + z.shape)
        # zero-mean across frames so the chunk summary is z itself
        jitter -= jitter.mean(axis=0)
        return tuple(FrameLatent(z + j) for j in jitter)

    def _finish(self, z: np.ndarray, step: int) -> GeneratedBatch:
        visible = z
        conditioning = None
        for ev in self.cfg.corruption_schedule:
            if ev.step != step:
                continue
            if ev.persistence == ONE_SHOT:
                visible = inject_corruption(visible, ev, self.cfg.seed)
            else:
                base = visible if conditioning is None else conditioning
                conditioning = inject_corruption(base, ev, self.cfg.seed)
        frames = self._frames(visible, step)
        summary = summarize_chunk(frames, step).values
        if conditioning is not None:
            summary = summary + (conditioning - visible)
        keys, values = self.project(summary)
        return GeneratedBatch(frames=frames, keys=keys, values=values)

    def initial_batch(self, init: InitPolicy) -> GeneratedBatch:
        z = self.anchor() + self._noise(1, _INIT, self.cfg.base_noise * init.noise_scale)
        return self._finish(z, 1)

    def readout(self, cache: KVCache, draft: np.ndarray) -> np.ndarray:
        k_curr, v_curr = self.project(draft)
        K, V = cache.assemble_context(k_curr, v_curr)
        return attention(k_curr, K, V, self.cfg.head_dim) @ self.w_value.T

    def generate_batch(self, cache: KVCache, prev: LatentSummary, step: int) -> GeneratedBatch:
        a = self.cfg.context_mix
        draft = prev.values + self._noise(step, _NOISE, self.cfg.base_noise)
        z = (1.0 - a) * draft
        if a > 0:
            z = z + a * self.readout(cache, draft)
        return self._finish(z, step)


def make_init(policy: InitPolicy, cfg: GeneratorConfig) -> tuple[GeneratedBatch, LatentSummary]:
    """First chunk of a stream and its summary."""
    batch = LatentGenerator(cfg).initial_batch(policy)
    return batch, summarize_chunk(batch.frames, 1)


def rollout(gen: LatentGenerator, layout: Layout, steps: int, init: InitPolicy) -> StreamResult:
    """Plain autoregressive loop with no drift scoring or pruning.

    The returned result has no outcomes; only batches, summaries and cache.
    """
    batch = gen.initial_batch(init)
    summary = summarize_chunk(batch.frames, 1)
    cache = gen.empty_cache(layout).append(batch.keys, batch.values, 1)
    out = StreamResult(batches=[batch], summaries=[summary])
    for t in range(2, steps + 1):
        batch = gen.generate_batch(cache, summary, t)
        summary = summarize_chunk(batch.frames, t)
        cache = cache.append(batch.keys, batch.values, t)
        out.batches.append(batch)
        out.summaries.append(summary)
    out.cache = cache
    return out


def clean_reference(
    cfg: GeneratorConfig, layout: Layout, steps: int, init: InitPolicy
) -> list[LatentSummary]:
    """Summaries of an uncorrupted, unpruned rollout under the same seed."""
    gen = LatentGenerator(replace(cfg, corruption_schedule=()))
    return rollout(gen, layout, steps, init).summaries
