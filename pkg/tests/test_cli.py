import csv
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

import gwgflow.targets
from gwgflow.cli import main, merge_runs
from gwgflow.config import (PRESETS, ConfigError, config_from_dict, config_to_dict, dump_config,
                            load_config, preset)
from gwgflow.runner import run_experiment
from gwgflow.verify import run_checks


def small_config(tmp_path, name="gaussian-sanity", steps=30, **sampler):
    data = config_to_dict(preset(name, desk_scale=True))
    data["sampler"].update(outer_steps=steps, checkpoint_every=10, **sampler)
    data["n_particles"] = min(data["n_particles"], 60)
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("desk", [False, True])
def test_preset_round_trip(name, desk):
    cfg = preset(name, desk_scale=desk, seed=7)
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(PRESETS), st.integers(0, 2**64 - 1), st.floats(1e-4, 1.0),
       st.integers(0, 7))
def test_round_trip_fixed_point(name, seed, h, inner):
    data = config_to_dict(preset(name, seed=seed))
    data["sampler"]["step_size"] = h
    data["sampler"]["inner_steps"] = inner
    once = dump_config(config_from_dict(data))
    assert dump_config(config_from_dict(yaml.safe_load(once))) == once


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("mixture-l3")


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d["sampler"].update(p_lb=0.9), "sampler.p_lb: lower bound on p must satisfy lb > 1"),
    (lambda d: d.update(colour="red"), "unknown keys"),
    (lambda d: d["sampler"].update(stepsize=0.1), "sampler: unknown keys"),
    (lambda d: d["target"].update(kind="banana"), "target.kind"),
    (lambda d: d["sampler"].update(young={"kind": "lp", "p": 0.5}), "sampler.young"),
    (lambda d: d.pop("sampler"), "sampler: missing"),
    (lambda d: d.update(metrics=["accuracy"]), "metrics"),
])
def test_invalid_config_messages(mutate, message):
    data = config_to_dict(preset("mixture-ada"))
    mutate(data)
    with pytest.raises(ConfigError, match=message.replace(".", r"\.")):
        config_from_dict(data)


def test_run_rejects_bad_config_with_field_message(tmp_path, capsys):
    data = config_to_dict(preset("mixture-ada"))
    data["sampler"]["p_lb"] = 0.9
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(data))
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code != 0
    assert "lb > 1" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_run_needs_exactly_one_source(tmp_path):
    assert main(["run", "--out", str(tmp_path / "x")]) != 0


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config(tmp_path)), "--seed", "11",
                 "--out", str(out)]) == 0
    cfg = load_config(out / "config.yaml")
    assert cfg.seed == 11
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["iter", "metric_name", "value", "wall_ms"]
    assert {r[1] for r in rows[1:]} == {"mean_norm", "cov_frob", "loss"}
    snaps = [json.loads(line) for line in open(out / "snapshots.jsonl")]
    assert [s["iter"] for s in snaps] == [0, 10, 20, 30]
    assert np.load(out / "final_particles.npy").shape == (60, 2)


def test_resolved_config_reproduces_run(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(small_config(tmp_path)), "--seed", "4",
                 "--out", str(first)]) == 0
    assert main(["run", "--config", str(first / "config.yaml"), "--out", str(second)]) == 0
    for name in ("metrics.csv", "snapshots.jsonl", "config.yaml"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_same_seed_byte_identical_across_worker_counts(tmp_path, monkeypatch):
    path = small_config(tmp_path, "mixture-ada", steps=20)
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("GWGFLOW_THREADS", threads)
        monkeypatch.setenv("OPENBLAS_NUM_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert main(["run", "--config", str(path), "--seed", "7", "--out", str(out)]) == 0
        outs.append(out)
    for name in ("metrics.csv", "snapshots.jsonl"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_different_seeds_differ(tmp_path):
    path = small_config(tmp_path)
    main(["run", "--config", str(path), "--seed", "1", "--out", str(tmp_path / "s1")])
    main(["run", "--config", str(path), "--seed", "2", "--out", str(tmp_path / "s2")])
    assert (tmp_path / "s1" / "metrics.csv").read_bytes() != \
        (tmp_path / "s2" / "metrics.csv").read_bytes()


def test_csv_header_stable_across_samplers(tmp_path):
    headers = set()
    for name in ("gaussian-sanity", "gaussian-svgd", "gaussian-lmc"):
        out = tmp_path / name
        assert main(["run", "--config", str(small_config(tmp_path, name)), "--out",
                     str(out)]) == 0
        headers.add(open(out / "metrics.csv").readline())
    assert headers == {"iter,metric_name,value,wall_ms\n"}


def test_wall_time_column_opt_in(tmp_path):
    data = yaml.safe_load(small_config(tmp_path).read_text())
    data["record_wall_time"] = True
    cfg = config_from_dict(data)
    run_experiment(cfg, tmp_path / "w")
    rows = list(csv.DictReader(open(tmp_path / "w" / "metrics.csv")))
    assert all(float(r["wall_ms"]) >= 0 for r in rows)


def test_param_dump_layout(tmp_path):
    data = yaml.safe_load(small_config(tmp_path, steps=3).read_text())
    data["dump_params"] = True
    run_experiment(config_from_dict(data), tmp_path / "p")
    flat = np.fromfile(tmp_path / "p" / "params.f64", dtype="<f8")
    assert flat.size == (2 * 32 + 32) + (32 * 32 + 32) + (32 * 2 + 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_run_keeps_partial_outputs(tmp_path):
    data = yaml.safe_load(small_config(tmp_path, "gaussian-lmc", steps=200).read_text())
    data["sampler"]["step_size"] = 1e3  # x <- -999 x + noise overflows within ~100 steps
    code = run_experiment(config_from_dict(data), tmp_path / "d")
    assert code == 3
    failure = json.loads((tmp_path / "d" / "failure.json").read_text())
    assert failure["iteration"] >= 1
    assert (tmp_path / "d" / "metrics.csv").exists()


def test_compare_merges_runs(tmp_path):
    path = small_config(tmp_path)
    for seed in ("1", "2"):
        main(["run", "--config", str(path), "--seed", seed, "--out", str(tmp_path / seed)])
    merged = tmp_path / "merged.csv"
    assert main(["compare", str(tmp_path / "1"), str(tmp_path / "2"), "--out",
                 str(merged)]) == 0
    rows = list(csv.DictReader(open(merged)))
    assert list(rows[0]) == ["method", "iter", "metric", "value"]
    counts = {m: sum(r["method"] == m for r in rows) for m in ("1", "2")}
    assert counts["1"] == counts["2"] > 0


def test_compare_rejects_mismatched_metrics(tmp_path, capsys):
    main(["run", "--config", str(small_config(tmp_path)), "--out", str(tmp_path / "g")])
    main(["run", "--config", str(small_config(tmp_path, "gaussian-lmc")), "--out",
          str(tmp_path / "l")])
    assert main(["compare", str(tmp_path / "g"), str(tmp_path / "l")]) != 0
    err = capsys.readouterr().err
    assert "missing" in err and "cov_frob" in err


def test_compare_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["compare"])
    assert info.value.code != 0
    with pytest.raises(ConfigError):
        merge_runs([tmp_path])


def test_verify_clean_build(tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["verify", "--report", str(report)]) == 0
    rows = json.loads(report.read_text())
    assert rows and all(r["passed"] for r in rows)
    assert set(rows[0]) == {"name", "value", "bound_lo", "bound_hi", "passed"}
    assert "PASS" in capsys.readouterr().out


def test_verify_detects_corrupted_cd_score(monkeypatch):
    original = gwgflow.targets.cd_score
    monkeypatch.setattr(gwgflow.targets, "cd_score", lambda t, x: -original(t, x))
    failed = [r.name for r in run_checks() if not r.passed]
    assert failed == ["score_fd[conditioned_diffusion]"]
