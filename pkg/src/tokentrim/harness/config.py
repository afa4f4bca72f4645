"""Experiment configuration, YAML loading and built-in presets.

A config document is a nested mapping::

    preset: tokentrim-default      # optional; the document overrides it
    steps: 50
    seeds: [0, 1, 2]
    trigger:   {lam: 2.0, warmup: 2, fraction: 0.1, max_regen: 1, enabled: true}
    layout:    {kind: rolling, window: 4}
    init:      {mode: stabilized, stabilized_noise_scale: 0.5}
    generator:
      n_tokens: 64
      corruption:
        - {step: 10, tokens: [18, 19], magnitude: 2.0, persistence: recurring-via-context}

Every key is optional; anything missing falls back to the preset (or to
``tokentrim-default`` when no preset is named).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..drift import TriggerConfig
from ..errors import ConfigError
from ..kvcache import AnchorRecent, Layout, Rolling
from ..latent import TokenGridShape
from ..simgen import (
    PLAIN,
    RECURRING,
    STABILIZED,
    CorruptionEvent,
    GeneratorConfig,
    InitPolicy,
)

# a 7-token patch around (3, 3) of the 8x8 grid; 7 = ceil(0.1 * 64)
DEFAULT_CORRUPTION = {
    "step": 10,
    "tokens": [18, 19, 20, 26, 27, 28, 35],
    "magnitude": 2.0,
    "persistence": RECURRING,
}

_BASE: dict[str, Any] = {
    "steps": 50,
    "seeds": [0],
    "trigger": {"lam": 2.0, "warmup": 2, "fraction": 0.1, "max_regen": 1, "enabled": True},
    "layout": {"kind": "rolling", "window": 4},
    "init": {"mode": STABILIZED, "stabilized_noise_scale": 0.5},
    "generator": {
        "n_tokens": 64,
        "dim": 16,
        "frames_per_chunk": 3,
        "head_dim": 16,
        "base_noise": 0.02,
        "context_mix": 0.6,
        "frame_jitter": 0.005,
        "position_scale": 10.0,
        "latent_scale": 0.25,
        "weights_seed": 0,
        "corruption": [DEFAULT_CORRUPTION],
    },
}


def _preset(**overrides) -> dict[str, Any]:
    doc = copy.deepcopy(_BASE)
    for dotted, value in overrides.items():
        *parents, leaf = dotted.split("__")
        node = doc
        for p in parents:
            node = node[p]
        node[leaf] = value
    return doc


PRESETS: dict[str, tuple[str, dict[str, Any]]] = {
    "baseline": (
        "base generator, pruning disabled, plain first chunk",
        _preset(trigger__enabled=False, init__mode=PLAIN),
    ),
    "tokentrim-default": (
        "p=0.1, lambda=2.0, T_warm=2, R=1, stabilized first chunk",
        _preset(),
    ),
    "tokentrim-5pct": ("as default with 5% pruning", _preset(trigger__fraction=0.05)),
    "tokentrim-20pct": ("as default with 20% pruning", _preset(trigger__fraction=0.2)),
    "tokentrim-no-stabilized-init": (
        "as default with a plain first chunk",
        _preset(init__mode=PLAIN),
    ),
    "tokentrim-anchor": (
        "as default on an anchor + recent cache (1 anchor, 3 recent chunks)",
        _preset(layout={"kind": "anchor-recent", "anchors": 1, "recent": 3}),
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    layout: Layout = field(default_factory=Rolling)
    init: InitPolicy = field(default_factory=InitPolicy)
    steps: int = 50
    seeds: tuple[int, ...] = (0,)
    preset_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("must be nonempty", "seeds")
        if self.steps < 1:
            raise ConfigError(f"must be >= 1, got {self.steps}", "steps")
        self.trigger.check_grid(self.generator.shape.n_tokens)

    def to_dict(self) -> dict[str, Any]:
        """Canonical nested document; ``from_dict(to_dict())`` round-trips."""
        g = self.generator
        if isinstance(self.layout, AnchorRecent):
            layout = {"kind": "anchor-recent", "anchors": self.layout.anchors,
                      "recent": self.layout.recent}
        else:
            layout = {"kind": "rolling", "window": self.layout.window}
        return {
            "preset": self.preset_name,
            "steps": self.steps,
            "seeds": list(self.seeds),
            "trigger": {
                "lam": self.trigger.lam,
                "warmup": self.trigger.warmup,
                "fraction": self.trigger.fraction,
                "max_regen": self.trigger.max_regen,
                "enabled": self.trigger.enabled,
            },
            "layout": layout,
            "init": {
                "mode": self.init.mode,
                "stabilized_noise_scale": self.init.stabilized_noise_scale,
            },
            "generator": {
                "n_tokens": g.shape.n_tokens,
                "dim": g.shape.dim,
                "frames_per_chunk": g.frames_per_chunk,
                "head_dim": g.head_dim,
                "base_noise": g.base_noise,
                "context_mix": g.context_mix,
                "frame_jitter": g.frame_jitter,
                "position_scale": g.position_scale,
                "latent_scale": g.latent_scale,
                "weights_seed": g.weights_seed,
                "corruption": [
                    {"step": e.step, "tokens": list(e.token_indices),
                     "magnitude": e.magnitude, "persistence": e.persistence}
                    for e in g.corruption_schedule
                ],
            },
        }

    def config_hash(self) -> str:
        """sha256 over the canonical document minus seeds and preset label."""
        doc = self.to_dict()
        doc.pop("seeds")
        doc.pop("preset")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def corruption_step(self) -> int | None:
        steps = [e.step for e in self.generator.corruption_schedule]
        return min(steps) if steps else None


def _merge(base: dict, over: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError("unknown setting", where)
        if isinstance(out[key], dict) and key != "layout":
            if not isinstance(value, Mapping):
                raise ConfigError("expected a mapping", where)
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build(section: str, fn, kwargs: Mapping):
    try:
        return fn(**kwargs)
    except ConfigError as exc:
        leaf = exc.field.rsplit(".", 1)[-1] if exc.field else None
        raise ConfigError(str(exc).split(": ", 1)[-1], f"{section}.{leaf}" if leaf else section) from None
    except TypeError as exc:
        raise ConfigError(str(exc), section) from None


def from_dict(doc: Mapping[str, Any]) -> ExperimentConfig:
    """Build a validated config from a (possibly partial) document."""
    doc = dict(doc)
    name = doc.pop("preset", None)
    if name is not None and name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; see `tokentrim presets list`", "preset")
    full = _merge(PRESETS[name or "tokentrim-default"][1], doc)

    lay = dict(full["layout"])
    kind = lay.pop("kind", "rolling")
    if kind == "rolling":
        layout = _build("layout", Rolling, lay)
    elif kind == "anchor-recent":
        layout = _build("layout", AnchorRecent, lay)
    else:
        raise ConfigError(f"unknown layout kind {kind!r}", "layout.kind")

    g = dict(full["generator"])
    events = []
    for i, ev in enumerate(g.pop("corruption") or []):
        ev = dict(ev)
        if "tokens" in ev:
            ev["token_indices"] = ev.pop("tokens")
        events.append(_build(f"generator.corruption[{i}]", CorruptionEvent, ev))
    try:
        shape = TokenGridShape(int(g.pop("n_tokens")), int(g.pop("dim")))
    except ValueError as exc:
        raise ConfigError(str(exc), "generator.n_tokens") from None
    generator = _build(
        "generator", GeneratorConfig, dict(g, shape=shape, corruption_schedule=tuple(events))
    )
    trigger = _build("trigger", TriggerConfig, full["trigger"])
    init = _build("init", InitPolicy, full["init"])
    try:
        return ExperimentConfig(
            trigger=trigger,
            generator=generator,
            layout=layout,
            init=init,
            steps=int(full["steps"]),
            seeds=tuple(full["seeds"]),
            preset_name=name,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "seeds") from None


def preset(name: str, **overrides) -> ExperimentConfig:
    """Built-in preset, optionally with top-level overrides such as ``seeds``."""
    return from_dict(dict(overrides, preset=name))


def load_config(path: str | Path, preset_name: str | None = None) -> ExperimentConfig:
    """Read a YAML config file; ``preset_name`` replaces the file's own preset."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "config") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}", "config") from None
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path} must hold a mapping at top level", "config")
    if preset_name is not None:
        doc = dict(doc, preset=preset_name)
    return from_dict(doc)
