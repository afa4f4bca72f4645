"""One TokenTrim step and the multi-step driver around it.

Per step: generate a candidate chunk against the current cache, summarize
it, score per-token drift against the previous accepted summary, and test
the severity against the running threshold. Past warm-up, a severity above
threshold prunes the top-drift spatial indices from the cache and the chunk
is regenerated against the pruned cache, up to ``max_regen`` times. The
accepted chunk's keys/values are appended and its severity enters the
running statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Protocol

import numpy as np

from .drift import RunningStats, TriggerConfig, accept_severity, should_trigger
from .errors import GeneratorError, TokenTrimError
from .kvcache import KVCache, Layout, PruneMask, empty_cache
from .latent import (
    DriftProfile,
    FrameLatent,
    LatentSummary,
    build_drift_profile,
    per_token_drift,
    summarize_chunk,
)

log = logging.getLogger(__name__)


class AcceptedVia(str, Enum):
    INIT = "init"
    WARMUP = "warmup"
    UNDER_THRESHOLD = "under-threshold"
    REGENERATED = "regenerated"
    REGEN_EXHAUSTED = "regen-exhausted"


@dataclass(frozen=True)
class GeneratedBatch:
    """Frames of one chunk plus the key/value rows it contributes to the cache."""

    frames: tuple[FrameLatent, ...]
    keys: np.ndarray
    values: np.ndarray


class GeneratorPort(Protocol):
    """What the controller needs from a chunk generator.

    Both methods must be deterministic: the same seed, step, previous
    summary and cache contents give the same batch.
    """

    def initial_batch(self, init) -> GeneratedBatch: ...

    def generate_batch(
        self, cache: KVCache, prev: LatentSummary, step: int
    ) -> GeneratedBatch: ...


@dataclass(frozen=True)
class StepOutcome:
    step: int
    severity_initial: float
    threshold: float | None
    triggered: bool
    pruned_indices: tuple[int, ...]
    severity_final: float
    regen_count: int
    accepted_via: AcceptedVia
    alive_rows: int

    @property
    def pruned_count(self) -> int:
        return len(self.pruned_indices)


class StepResult(NamedTuple):
    batch: GeneratedBatch
    summary: LatentSummary
    cache: KVCache
    stats: RunningStats
    outcome: StepOutcome


def _generate(gen: GeneratorPort, cache: KVCache, prev: LatentSummary, step: int):
    try:
        return gen.generate_batch(cache, prev, step)
    except TokenTrimError:
        raise
    except Exception as exc:
        raise GeneratorError(f"generator failed at step {step}: {exc}") from exc


def _score(batch: GeneratedBatch, prev: LatentSummary, step: int, fraction: float):
    summary = summarize_chunk(batch.frames, step)
    profile = build_drift_profile(per_token_drift(summary, prev), fraction)
    return summary, profile


def tokentrim_step(
    prev_summary: LatentSummary,
    gen: GeneratorPort,
    cache: KVCache,
    stats: RunningStats,
    cfg: TriggerConfig,
    step: int,
) -> StepResult:
    """Run one gated generation step (``step >= 2``, 1-based)."""
    if step < 2:
        raise ValueError(f"tokentrim_step handles steps >= 2, got {step}")
    batch = _generate(gen, cache, prev_summary, step)
    summary, profile = _score(batch, prev_summary, step, cfg.fraction)
    severity = profile.severity
    triggered, threshold = should_trigger(stats, severity, step, cfg)

    pruned: tuple[int, ...] = ()
    regen = 0
    final_severity = severity
    if threshold is None:
        via = AcceptedVia.WARMUP
    elif not triggered:
        via = AcceptedVia.UNDER_THRESHOLD
    else:
        via = AcceptedVia.REGEN_EXHAUSTED
        pruned = profile.selected
        cache = cache.apply_prune(PruneMask(profile.keep_mask()))
        current: DriftProfile = profile
        while regen < cfg.max_regen:
            if regen:
                # a further retry also drops the tokens that drifted in the last attempt
                cache = cache.apply_prune(PruneMask(current.keep_mask()))
                pruned += tuple(i for i in current.selected if i not in pruned)
            batch = _generate(gen, cache, prev_summary, step)
            regen += 1
            summary, current = _score(batch, prev_summary, step, cfg.fraction)
            final_severity = current.severity
            if final_severity <= threshold:
                via = AcceptedVia.REGENERATED
                break
        log.debug(
            "step %d: severity %.6g > %.6g, pruned %d tokens, %s",
            step, severity, threshold, len(pruned), via.value,
        )

    cache = cache.append(batch.keys, batch.values, step)
    stats = accept_severity(stats, final_severity)
    outcome = StepOutcome(
        step=step,
        severity_initial=severity,
        threshold=threshold,
        triggered=triggered,
        pruned_indices=pruned,
        severity_final=final_severity,
        regen_count=regen,
        accepted_via=via,
        alive_rows=cache.alive_rows(),
    )
    return StepResult(batch, summary, cache, stats, outcome)


@dataclass
class StreamResult:
    outcomes: list[StepOutcome] = field(default_factory=list)
    summaries: list[LatentSummary] = field(default_factory=list)
    batches: list[GeneratedBatch] = field(default_factory=list)
    cache: KVCache | None = None
    stats: RunningStats = field(default_factory=RunningStats)


def run_stream(
    gen: GeneratorPort,
    cfg: TriggerConfig,
    layout: Layout,
    steps: int,
    init,
) -> StreamResult:
    """Initialize with ``gen.initial_batch(init)`` and gate steps ``2..steps``.

    The first chunk is appended to the cache ungated and does not enter the
    running statistics, since it has no predecessor to drift from.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    first = gen.initial_batch(init)
    summary = summarize_chunk(first.frames, 1)
    n = summary.values.shape[0]
    cfg.check_grid(n)
    cache = empty_cache(layout, n, first.keys.shape[1], first.values.shape[1])
    cache = cache.append(first.keys, first.values, 1)

    out = StreamResult(cache=cache)
    out.summaries.append(summary)
    out.batches.append(first)
    out.outcomes.append(
        StepOutcome(
            step=1,
            severity_initial=0.0,
            threshold=None,
            triggered=False,
            pruned_indices=(),
            severity_final=0.0,
            regen_count=0,
            accepted_via=AcceptedVia.INIT,
            alive_rows=cache.alive_rows(),
        )
    )
    stats = RunningStats()
    for t in range(2, steps + 1):
        res = tokentrim_step(summary, gen, cache, stats, cfg, t)
        summary, cache, stats = res.summary, res.cache, res.stats
        out.summaries.append(summary)
        out.batches.append(res.batch)
        out.outcomes.append(res.outcome)
    out.cache = cache
    out.stats = stats
    return out
