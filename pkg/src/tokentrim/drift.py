"""Running statistics over accepted drift severities and the adaptive trigger.

Statistics use the population form (divide by the number of accepted
steps). A step fires when its severity strictly exceeds
``mean + lam * std`` and the warm-up period has passed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FiniteError
from .latent import unstable_count

STREAMING = "streaming"
EXACT = "exact"

# defaults for pruning fraction, sensitivity, warm-up length and regeneration budget
DEFAULT_FRACTION = 0.1
DEFAULT_LAMBDA = 2.0
DEFAULT_WARMUP = 2
DEFAULT_MAX_REGEN = 1


@dataclass(frozen=True)
class TriggerConfig:
    """Trigger and pruning hyperparameters.

    ``enabled=False`` turns the controller into a pure monitor: drift is
    still scored and statistics accumulate, but nothing is ever pruned.
    """

    lam: float = DEFAULT_LAMBDA
    warmup: int = DEFAULT_WARMUP
    fraction: float = DEFAULT_FRACTION
    max_regen: int = DEFAULT_MAX_REGEN
    enabled: bool = True

    def __post_init__(self):
        if not (self.lam > 0):
            raise ConfigError(f"must be > 0, got {self.lam}", "trigger.lam")
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {self.fraction}", "trigger.fraction")
        if self.warmup < 0:
            raise ConfigError(f"must be >= 0, got {self.warmup}", "trigger.warmup")
        if self.max_regen < 0:
            raise ConfigError(f"must be >= 0, got {self.max_regen}", "trigger.max_regen")

    def check_grid(self, n_tokens: int) -> int:
        """Validate the fraction against a token count and return ``ceil(p*N)``."""
        try:
            return unstable_count(self.fraction, n_tokens)
        except ConfigError as exc:
            raise ConfigError(str(exc), "trigger.fraction") from None


@dataclass(frozen=True)
class RunningStats:
    """Mean and sum of squared deviations of accepted severities.

    In ``streaming`` mode the moments are updated with Welford's recurrence.
    In ``exact`` mode the full history is kept and both moments are
    recomputed from it with the batch formulas on every update.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    history_mode: str = STREAMING
    history: tuple[float, ...] = ()

    def __post_init__(self):
        if self.history_mode not in (STREAMING, EXACT):
            raise ConfigError(f"unknown history mode {self.history_mode!r}", "history_mode")

    @classmethod
    def exact(cls) -> "RunningStats":
        return cls(history_mode=EXACT)

    def variance(self) -> float:
        if self.count <= 1:
            return 0.0
        return self.m2 / self.count

    def std(self) -> float:
        return math.sqrt(self.variance())


def accept_severity(stats: RunningStats, severity: float) -> RunningStats:
    """Fold one accepted severity into the statistics."""
    x = float(severity)
    if not math.isfinite(x):
        raise FiniteError(f"severity must be finite, got {severity}")
    if x < 0:
        raise ValueError(f"severity must be nonnegative, got {severity}")
    n = stats.count + 1
    if stats.history_mode == EXACT:
        hist = stats.history + (x,)
        arr = np.array(hist)
        mean = float(arr.mean())
        m2 = float(((arr - mean) ** 2).sum())
        return replace(stats, count=n, mean=mean, m2=m2, history=hist)
    delta = x - stats.mean
    mean = stats.mean + delta / n
    m2 = stats.m2 + delta * (x - mean)
    return replace(stats, count=n, mean=mean, m2=max(m2, 0.0))


def trigger_threshold(stats: RunningStats, lam: float) -> float:
    """``mean + lam * std``; an empty history gives 0."""
    if stats.count == 0:
        return 0.0
    return stats.mean + lam * stats.std()


def should_trigger(
    stats: RunningStats, severity: float, step: int, cfg: TriggerConfig
) -> tuple[bool, float | None]:
    """Decide whether the severity at ``step`` calls for pruning.

    Returns the decision and the threshold it was compared against. During
    warm-up (``step <= cfg.warmup``) the decision is always ``False`` and the
    threshold is ``None``. A disabled config still reports the threshold.
    """
    if step <= cfg.warmup:
        return False, None
    thr = trigger_threshold(stats, cfg.lam)
    return bool(cfg.enabled and severity > thr), thr
