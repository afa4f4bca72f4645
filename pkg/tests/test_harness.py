import csv
import json
import logging

import pytest

from tokentrim import AcceptedVia, ConfigError
from tokentrim.harness import (
    CSV_COLUMNS,
    PRESETS,
    compare_runs,
    emit_metrics,
    from_dict,
    load_config,
    load_run,
    preset,
    run_experiment,
)
from tokentrim.harness.cli import main
from tokentrim.harness.records import compute_aggregates, sign_test
from tokentrim.harness.runner import run_seed
from tokentrim.kvcache import AnchorRecent
from tokentrim.simgen import PLAIN


def test_default_preset_parameters():
    cfg = preset("tokentrim-default")
    t = cfg.trigger
    assert (t.fraction, t.lam, t.warmup, t.max_regen, t.enabled) == (0.1, 2.0, 2, 1, True)
    doc = cfg.to_dict()["trigger"]
    assert doc == {"lam": 2.0, "warmup": 2, "fraction": 0.1, "max_regen": 1, "enabled": True}


def test_ablation_presets():
    assert preset("tokentrim-5pct").trigger.fraction == 0.05
    assert preset("tokentrim-20pct").trigger.fraction == 0.2
    assert preset("tokentrim-no-stabilized-init").init.mode == PLAIN
    assert not preset("baseline").trigger.enabled
    assert isinstance(preset("tokentrim-anchor").layout, AnchorRecent)
    assert len({preset(n).config_hash() for n in PRESETS}) == len(PRESETS)


def test_baseline_never_prunes():
    (rec,) = run_experiment(preset("baseline", steps=30))
    assert all(not r.triggered and r.pruned_count == 0 for r in rec.rows)
    cfg = preset("baseline", steps=30)
    from tokentrim import run_stream
    from tokentrim.simgen import LatentGenerator

    res = run_stream(LatentGenerator(cfg.generator), cfg.trigger, cfg.layout, 30, cfg.init)
    allowed = {AcceptedVia.INIT, AcceptedVia.WARMUP, AcceptedVia.UNDER_THRESHOLD}
    assert {o.accepted_via for o in res.outcomes} <= allowed


def test_round_trip_and_hash_ignores_seeds():
    cfg = preset("tokentrim-anchor", seeds=[3, 4], steps=12)
    again = from_dict(cfg.to_dict())
    assert again == cfg
    assert preset("tokentrim-default", seeds=[9]).config_hash() == preset("tokentrim-default").config_hash()


def test_yaml_file_with_overrides(tmp_path):
    f = tmp_path / "exp.yaml"
    f.write_text(
        "preset: tokentrim-5pct\nsteps: 12\nseeds: [1, 2]\n"
        "trigger:\n  lam: 3.0\nlayout:\n  kind: anchor-recent\n  anchors: 2\n  recent: 2\n"
        "generator:\n  corruption: []\n"
    )
    cfg = load_config(f)
    assert cfg.trigger.fraction == 0.05 and cfg.trigger.lam == 3.0
    assert cfg.steps == 12 and cfg.seeds == (1, 2)
    assert cfg.layout == AnchorRecent(2, 2)
    assert cfg.generator.corruption_schedule == () and cfg.corruption_step is None
    assert load_config(f, "tokentrim-20pct").trigger.fraction == 0.2


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"trigger": {"lam": -1}}, "trigger.lam"),
        ({"trigger": {"lamb": 1}}, "trigger.lamb"),
        ({"generator": {"context_mix": 2.0}}, "generator.context_mix"),
        ({"generator": {"corruption": [{"step": 3, "tokens": [1], "magnitude": 0}]}}, "generator.corruption[0].magnitude"),
        ({"layout": {"kind": "ring"}}, "layout.kind"),
        ({"init": {"mode": "fancy"}}, "init.mode"),
        ({"seeds": []}, "seeds"),
        ({"steps": 0}, "steps"),
        ({"preset": "nope"}, "preset"),
        ({"trigger": {"fraction": 0.99}}, "trigger.fraction"),
    ],
)
def test_config_errors_carry_field_paths(doc, field):
    with pytest.raises(ConfigError) as err:
        from_dict(doc)
    assert err.value.field == field


def test_bad_yaml(tmp_path):
    f = tmp_path / "bad.yaml"
    f.write_text("trigger: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(f)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_three_step_csv(tmp_path):
    cfg = preset("tokentrim-default", steps=3)
    csv_path, json_path = emit_metrics(run_experiment(cfg), tmp_path, cfg.to_dict())
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "seed,step,severity_initial,threshold,triggered,regen_count,severity_final,pruned_count,alive_rows"
    assert len(lines) == 4
    # steps 1 and 2 have no threshold
    assert [row[3] for row in _read_csv(csv_path)[1:3]] == ["", ""]
    doc = json.loads(json_path.read_text())
    assert doc["schema_version"] == "1"
    assert doc["config_hash"] == cfg.config_hash()


def test_json_aggregates_match_csv_recomputation(tmp_path):
    cfg = preset("tokentrim-default", seeds=[0, 1, 2], steps=25)
    csv_path, json_path = emit_metrics(run_experiment(cfg), tmp_path, cfg.to_dict())
    doc = json.loads(json_path.read_text())
    rows = _read_csv(csv_path)
    assert tuple(rows[0]) == CSV_COLUMNS
    for run in doc["runs"]:
        mine = [dict(zip(CSV_COLUMNS, r)) for r in rows[1:] if int(r[0]) == run["seed"]]
        gated = [r for r in mine if int(r["step"]) >= 2]
        agg = run["aggregates"]
        assert agg["steps"] == len(mine) == 25
        assert agg["trigger_count"] == sum(r["triggered"] == "1" for r in mine)
        assert agg["regen_total"] == sum(int(r["regen_count"]) for r in mine)
        assert agg["pruned_total"] == sum(int(r["pruned_count"]) for r in mine)
        assert agg["alive_rows_total"] == sum(int(r["alive_rows"]) for r in mine)
        area = 0.0
        for r in mine:
            area += float(r["severity_final"])
        assert agg["drift_area"] == area
        after = 0.0
        for r in mine:
            if int(r["step"]) >= doc["corruption_step"]:
                after += float(r["severity_final"])
        assert agg["drift_area_after_corruption"] == after
        s0 = 0.0
        for r in gated:
            s0 += float(r["severity_initial"])
        assert agg["mean_severity_initial"] == s0 / len(gated)
        assert agg["regen_rate"] == sum(int(r["regen_count"]) > 0 for r in gated) / len(gated)
    # and the loader reproduces the same numbers
    for rec, run in zip(load_run(tmp_path), doc["runs"]):
        assert rec.aggregates == run["aggregates"]


def test_byte_identical_reruns(tmp_path):
    cfg = preset("tokentrim-default", seeds=[0, 1], steps=15)
    a = emit_metrics(run_experiment(cfg), tmp_path / "a", cfg.to_dict())
    b = emit_metrics(run_experiment(cfg, workers=2), tmp_path / "b", cfg.to_dict())
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_self_comparison_is_zero():
    recs = run_experiment(preset("tokentrim-default", seeds=[0, 1, 2], steps=15))
    cmp_ = compare_runs(recs, recs)
    for m in cmp_.metrics:
        assert all(d == 0.0 for d in m.deltas) and m.p_value == 1.0
    assert "drift_area" in cmp_.format_table()


def test_compare_rejects_mismatches():
    a = run_experiment(preset("tokentrim-default", seeds=[0, 1], steps=5))
    with pytest.raises(ConfigError):
        compare_runs(a, run_experiment(preset("tokentrim-default", seeds=[0, 2], steps=5)))
    with pytest.raises(ConfigError):
        compare_runs(a, run_experiment(preset("tokentrim-default", seeds=[0, 1], steps=6)))


def test_sign_test_values():
    assert sign_test([0.0, 0.0]) == 1.0
    # all 10 negative: two-sided p = 2 * 0.5**10
    assert sign_test([-1.0] * 10) == pytest.approx(2 * 0.5**10, rel=1e-12)


def test_twenty_percent_keeps_fewer_rows():
    seeds = list(range(5))
    a = run_experiment(preset("tokentrim-default", seeds=seeds))
    b = run_experiment(preset("tokentrim-20pct", seeds=seeds))
    assert all(d < 0 for d in compare_runs(a, b)["alive_rows_total"].deltas)


def test_emit_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    recs = run_experiment(preset("tokentrim-default", steps=3))
    with pytest.raises(OSError, match="file"):
        emit_metrics(recs, blocker / "out", preset("tokentrim-default").to_dict())


def test_warmup_zero_warns(caplog):
    cfg = from_dict({"trigger": {"warmup": 0}, "steps": 3})
    with caplog.at_level(logging.WARNING):
        run_experiment(cfg)
    assert "warmup=0" in caplog.text


def test_aggregates_of_empty_gated_run():
    (rec,) = run_experiment(preset("tokentrim-default", steps=1))
    agg = compute_aggregates(rec.rows, rec.corruption_step)
    assert agg["steps"] == 1 and agg["mean_severity_final"] == 0.0
    assert agg["drift_area_after_corruption"] == 0.0


def test_fidelity_is_zero_without_corruption_or_pruning():
    cfg = from_dict({"preset": "baseline", "generator": {"corruption": []}, "steps": 10})
    rec = run_seed(cfg, 0)
    assert rec.fidelity["end_state_distance"] == 0.0


def test_cli_run_compare_and_exit_codes(tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--preset", "baseline", "--seed", "0", "--steps", "12", "--out", str(out_a)]) == 0
    f = tmp_path / "c.yaml"
    f.write_text("steps: 12\nseeds: [0]\n")
    assert main(["run", "--config", str(f), "--out", str(out_b)]) == 0
    assert main(["compare", str(out_a), str(out_b)]) == 0
    assert "alive_rows_total" in capsys.readouterr().out

    f.write_text("trigger:\n  lam: 0\n")
    assert main(["run", "--config", str(f), "--out", str(tmp_path / "x")]) == 2
    assert "trigger.lam" in capsys.readouterr().err
    assert main(["run", "--preset", "missing", "--out", str(tmp_path / "x")]) == 2
    assert main(["compare", str(out_a), str(tmp_path / "nowhere")]) == 3

    assert main(["presets", "list"]) == 0
    listing = capsys.readouterr().out
    assert all(name in listing for name in PRESETS)
    assert main(["presets", "show", "tokentrim-default"]) == 0
    assert "fraction: 0.1" in capsys.readouterr().out


def test_cli_steps_override_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("steps: 40\nseeds: [5]\n")
    assert main(["run", "--config", str(f), "--steps", "4", "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert doc["config"]["steps"] == 4 and doc["seeds"] == [1]
