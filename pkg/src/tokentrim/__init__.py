"""Drift-triggered KV-cache token pruning for chunk-wise autoregressive generation."""

from .controller import (
    AcceptedVia,
    GeneratedBatch,
    GeneratorPort,
    StepOutcome,
    StreamResult,
    run_stream,
    tokentrim_step,
)
from .drift import RunningStats, TriggerConfig, accept_severity, should_trigger
from .errors import (
    ConfigError,
    EmptyChunkError,
    EmptyContextError,
    FiniteError,
    GeneratorError,
    ShapeError,
    TokenTrimError,
)
from .kvcache import AnchorRecent, KVCache, PruneMask, Rolling, attention, empty_cache
from .latent import (
    DriftProfile,
    FrameLatent,
    LatentSummary,
    TokenGridShape,
    build_drift_profile,
    encode_frame,
    per_token_drift,
    summarize_chunk,
)

__version__ = "0.1.0"
