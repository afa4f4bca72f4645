"""Per-seed run records, their aggregates, file output and paired comparison.

Aggregates are computed from the per-step rows alone, with plain left-to-right
Python sums, so re-reading the CSV reproduces every JSON number exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from scipy.stats import binomtest

from ..controller import StepOutcome
from ..errors import ConfigError, TokenTrimError

SCHEMA_VERSION = "1"
CSV_NAME = "steps.csv"
JSON_NAME = "summary.json"
CSV_COLUMNS = (
    "seed",
    "step",
    "severity_initial",
    "threshold",
    "triggered",
    "regen_count",
    "severity_final",
    "pruned_count",
    "alive_rows",
)


@dataclass(frozen=True)
class StepRow:
    """One CSV line; ``threshold`` is ``None`` where no threshold applied."""

    step: int
    severity_initial: float
    threshold: float | None
    triggered: bool
    regen_count: int
    severity_final: float
    pruned_count: int
    alive_rows: int

    @classmethod
    def from_outcome(cls, o: StepOutcome) -> "StepRow":
        return cls(
            step=o.step,
            severity_initial=o.severity_initial,
            threshold=o.threshold,
            triggered=o.triggered,
            regen_count=o.regen_count,
            severity_final=o.severity_final,
            pruned_count=o.pruned_count,
            alive_rows=o.alive_rows,
        )


def compute_aggregates(rows: Sequence[StepRow], corruption_step: int | None = None) -> dict:
    """Per-run aggregates. Severity means cover the gated steps (2 onwards)."""
    gated = [r for r in rows if r.step >= 2]
    n_gated = len(gated)
    after = [r.severity_final for r in rows if corruption_step is not None and r.step >= corruption_step]
    return {
        "steps": len(rows),
        "trigger_count": sum(1 for r in rows if r.triggered),
        "regen_total": sum(r.regen_count for r in rows),
        "regen_rate": (sum(1 for r in gated if r.regen_count > 0) / n_gated) if n_gated else 0.0,
        "mean_severity_initial": (sum(r.severity_initial for r in gated) / n_gated) if n_gated else 0.0,
        "mean_severity_final": (sum(r.severity_final for r in gated) / n_gated) if n_gated else 0.0,
        "drift_area": sum(r.severity_final for r in rows),
        "drift_area_after_corruption": sum(after) if corruption_step is not None else None,
        "pruned_total": sum(r.pruned_count for r in rows),
        "alive_rows_total": sum(r.alive_rows for r in rows),
    }


@dataclass
class RunRecord:
    """Everything one seed produced.

    ``fidelity`` holds distances to clean reference trajectories and
    ``wall_clock`` the run time in seconds; the latter is never written to
    disk so output files stay byte-reproducible.
    """

    seed: int
    config_hash: str
    rows: list[StepRow]
    corruption_step: int | None = None
    fidelity: dict[str, float] = field(default_factory=dict)
    wall_clock: float | None = None

    @property
    def aggregates(self) -> dict:
        return compute_aggregates(self.rows, self.corruption_step)


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def records_to_csv(records: Iterable[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        for r in rec.rows:
            w.writerow([_fmt(rec.seed)] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
    return buf.getvalue()


def _mean_over_seeds(records: Sequence[RunRecord], key: str, getter) -> float | None:
    vals = [getter(r).get(key) for r in records]
    if any(v is None for v in vals):
        return None
    return sum(vals) / len(vals)


def summary_document(records: Sequence[RunRecord], config: dict) -> dict:
    if not records:
        raise ValueError("no records to summarize")
    hashes = {r.config_hash for r in records}
    if len(hashes) != 1:
        raise ValueError(f"records come from different configs: {sorted(hashes)}")
    per_seed = [r.aggregates for r in records]
    keys = per_seed[0].keys()
    fid_keys = records[0].fidelity.keys()
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": records[0].config_hash,
        "config": config,
        "corruption_step": records[0].corruption_step,
        "seeds": [r.seed for r in records],
        "aggregates": {k: _mean_over_seeds(records, k, lambda r: r.aggregates) for k in keys},
        "fidelity": {k: _mean_over_seeds(records, k, lambda r: r.fidelity) for k in fid_keys},
        "runs": [
            {"seed": r.seed, "aggregates": agg, "fidelity": dict(r.fidelity)}
            for r, agg in zip(records, per_seed)
        ],
    }


def emit_metrics(records: Sequence[RunRecord], out_dir: str | Path, config: dict) -> tuple[Path, Path]:
    """Write ``steps.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    csv_path, json_path = out / CSV_NAME, out / JSON_NAME
    text_csv = records_to_csv(records)
    text_json = json.dumps(summary_document(records, config), indent=2, sort_keys=True) + "\n"
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(text_csv)
        json_path.write_text(text_json)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write metrics to {out}: {exc.strerror}") from exc
    return csv_path, json_path


def _parse_rows(text: str, source: Path) -> dict[int, list[StepRow]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_COLUMNS:
        raise TokenTrimError(f"{source}: unexpected CSV header {header}")
    by_seed: dict[int, list[StepRow]] = {}
    for line in reader:
        seed, step, s0, thr, trig, regen, s1, pruned, alive = line
        by_seed.setdefault(int(seed), []).append(
            StepRow(
                step=int(step),
                severity_initial=float(s0),
                threshold=float(thr) if thr else None,
                triggered=trig == "1",
                regen_count=int(regen),
                severity_final=float(s1),
                pruned_count=int(pruned),
                alive_rows=int(alive),
            )
        )
    return by_seed


def load_run(run_dir: str | Path) -> list[RunRecord]:
    """Rebuild records from a directory written by :func:`emit_metrics`."""
    d = Path(run_dir)
    try:
        doc = json.loads((d / JSON_NAME).read_text())
        by_seed = _parse_rows((d / CSV_NAME).read_text(), d / CSV_NAME)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read run directory {d}: {exc.strerror}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise TokenTrimError(f"{d}: unsupported schema_version {doc.get('schema_version')!r}")
    fid = {run["seed"]: run.get("fidelity", {}) for run in doc["runs"]}
    return [
        RunRecord(
            seed=seed,
            config_hash=doc["config_hash"],
            rows=by_seed.get(seed, []),
            corruption_step=doc.get("corruption_step"),
            fidelity=fid[seed],
        )
        for seed in doc["seeds"]
    ]


@dataclass(frozen=True)
class MetricComparison:
    name: str
    deltas: tuple[float, ...]  # b - a, per seed
    mean_delta: float
    n_negative: int
    n_positive: int
    p_value: float


@dataclass(frozen=True)
class Comparison:
    seeds: tuple[int, ...]
    metrics: tuple[MetricComparison, ...]

    def __getitem__(self, name: str) -> MetricComparison:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def format_table(self) -> str:
        lines = [f"{'metric':<30} {'mean delta':>14} {'b<a':>5} {'b>a':>5} {'p':>8}"]
        for m in self.metrics:
            lines.append(
                f"{m.name:<30} {m.mean_delta:>14.6g} {m.n_negative:>5} {m.n_positive:>5} {m.p_value:>8.3g}"
            )
        return "\n".join(lines)


def sign_test(deltas: Sequence[float]) -> float:
    """Two-sided sign-test p-value; zero deltas are dropped."""
    neg = sum(1 for d in deltas if d < 0)
    pos = sum(1 for d in deltas if d > 0)
    if neg + pos == 0:
        return 1.0
    return float(binomtest(neg, neg + pos, 0.5).pvalue)


def compare_runs(a: Sequence[RunRecord], b: Sequence[RunRecord]) -> Comparison:
    """Paired per-seed deltas ``b - a`` of every numeric aggregate and fidelity value."""
    seeds_a = [r.seed for r in a]
    seeds_b = [r.seed for r in b]
    if sorted(seeds_a) != sorted(seeds_b) or len(set(seeds_a)) != len(seeds_a):
        raise ConfigError(f"seed sets differ: {seeds_a} vs {seeds_b}", "seeds")
    by_b = {r.seed: r for r in b}
    pairs = [(ra, by_b[ra.seed]) for ra in sorted(a, key=lambda r: r.seed)]
    for ra, rb in pairs:
        if len(ra.rows) != len(rb.rows):
            raise ConfigError(
                f"seed {ra.seed}: step counts differ ({len(ra.rows)} vs {len(rb.rows)})", "steps"
            )

    def values(rec: RunRecord) -> dict[str, float]:
        merged = {**rec.aggregates, **{f"fidelity.{k}": v for k, v in rec.fidelity.items()}}
        return {k: v for k, v in merged.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}

    va = [values(ra) for ra, _ in pairs]
    vb = [values(rb) for _, rb in pairs]
    names = [k for k in va[0] if all(k in x for x in va + vb)]
    metrics = []
    for name in names:
        deltas = tuple(float(y[name]) - float(x[name]) for x, y in zip(va, vb))
        metrics.append(
            MetricComparison(
                name=name,
                deltas=deltas,
                mean_delta=math.fsum(deltas) / len(deltas),
                n_negative=sum(1 for d in deltas if d < 0),
                n_positive=sum(1 for d in deltas if d > 0),
                p_value=sign_test(deltas),
            )
        )
    return Comparison(seeds=tuple(ra.seed for ra, _ in pairs), metrics=tuple(metrics))
