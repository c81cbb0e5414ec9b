"""End-to-end command-line workflows, run in process via main(argv)."""

import json
import math

import numpy as np
import pytest

import tppcluster.cli as cli
from tppcluster.cli import FitConfig, _draw_m_init, _merge, _rle, _unrle, main, read_trace
from tppcluster.core import ConfigError, Dataset, EventSequence, NumericalError, read_jsonl, write_jsonl


def _simulate(tmp_path, name="sim", k=2, delta=1.0, n=5, horizon=5.0, seed=11):
    out = tmp_path / name
    rc = main([
        "simulate", "--recipe", "hawkes-delta", "--k", str(k), "--delta", str(delta),
        "--n-per-cluster", str(n), "--horizon", str(horizon), "--seed", str(seed),
        "--out", str(out),
    ])
    assert rc == 0
    return out


def _fit(tmp_path, data_path, name="fit", extra=()):
    out = tmp_path / name
    rc = main([
        "fit", "--data", str(data_path), "--iterations", "40", "--burn-in", "20",
        "--m-init", "2", "--seed", "2", "--out", str(out), *extra,
    ])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_dataset_bundle(tmp_path):
    out = _simulate(tmp_path, k=2, n=4, horizon=3.0)
    assert (out / "dataset.jsonl").exists()
    assert (out / "dataset.meta.json").exists()
    assert (out / "config.snapshot.json").exists()
    data = read_jsonl(out / "dataset.jsonl")
    assert len(data.sequences) == 8
    assert all(s.label in (0, 1) for s in data.sequences)
    meta = json.loads((out / "dataset.meta.json").read_text())
    assert meta["recipe"] == "hawkes_delta" and meta["n_sequences"] == 8


def test_simulate_full_grid_point(tmp_path):
    out = tmp_path / "grid"
    rc = main(["simulate", "--recipe", "hawkes-delta", "--k", "4", "--delta", "0.6",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    data = read_jsonl(out / "dataset.jsonl")
    assert len(data.sequences) == 400  # 4 clusters x default 100
    labels = [s.label for s in data.sequences]
    assert all(labels.count(m) == 100 for m in range(4))
    snapshot = json.loads((out / "config.snapshot.json").read_text())
    assert snapshot["horizon"] == 10.0  # recipe default applied


def test_simulate_is_byte_reproducible(tmp_path):
    a = _simulate(tmp_path, name="a", seed=9)
    b = _simulate(tmp_path, name="b", seed=9)
    assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()


def test_simulate_requires_delta_for_graded_recipe(tmp_path, capsys):
    rc = main(["simulate", "--recipe", "hawkes-delta", "--k", "2",
               "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "delta" in capsys.readouterr().err


def test_hybrid_recipe_default_horizon(tmp_path):
    out = tmp_path / "hy"
    rc = main(["simulate", "--recipe", "hybrid", "--k", "3", "--n-per-cluster", "2",
               "--seed", "1", "--out", str(out)])
    assert rc == 0
    meta = json.loads((out / "dataset.meta.json").read_text())
    assert meta["horizon"] == 20.0


# ---------------------------------------------------------------------------
# fit


def test_fit_writes_trace_and_report(tmp_path):
    sim = _simulate(tmp_path)
    out = _fit(tmp_path, sim / "dataset.jsonl")
    assert (out / "resolved_config.json").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["iterations"] == 40 and report["burn_in"] == 20
    assert report["m_init"] == 2
    assert report["data_path"].endswith("dataset.jsonl")
    assert len(report["train_ids"]) + len(report["eval_ids"]) == 10
    assert report["eval_ids"]  # default eval fraction keeps a held-out split
    assert report["map"] is not None
    assert 1.0 <= report["k_mean"] <= 4.0
    trace = read_trace(out / "trace.jsonl")
    assert len(trace) == 20
    for rec in trace:
        assert rec["labels"].size == len(report["train_ids"])
        assert rec["k"] == len(rec["components"])


def test_fit_rejects_bad_sampler_lengths(tmp_path, capsys):
    sim = _simulate(tmp_path)
    rc = main(["fit", "--data", str(sim / "dataset.jsonl"), "--iterations", "0",
               "--out", str(tmp_path / "f0")])
    assert rc == 1
    assert "exceed burn_in" in capsys.readouterr().err
    rc = main(["fit", "--data", str(sim / "dataset.jsonl"), "--iterations", "10",
               "--burn-in", "10", "--out", str(tmp_path / "f1")])
    assert rc == 1


def test_fit_rejects_unknown_config_keys(tmp_path):
    sim = _simulate(tmp_path)
    bad_top = tmp_path / "bad_top.json"
    bad_top.write_text(json.dumps({"sampller": {}}))
    rc = main(["fit", "--data", str(sim / "dataset.jsonl"), "--config", str(bad_top),
               "--out", str(tmp_path / "g0")])
    assert rc == 1
    bad_nested = tmp_path / "bad_nested.json"
    bad_nested.write_text(json.dumps({"sampler": {"iters": 5}}))
    rc = main(["fit", "--data", str(sim / "dataset.jsonl"), "--config", str(bad_nested),
               "--out", str(tmp_path / "g1")])
    assert rc == 1


def test_fit_input_error_paths(tmp_path, capsys):
    sim = _simulate(tmp_path)
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["fit", "--data", str(sim / "dataset.jsonl"), "--config", str(broken),
                 "--out", str(tmp_path / "e0")]) == 1
    assert main(["fit", "--data", str(tmp_path / "nowhere.jsonl"),
                 "--out", str(tmp_path / "e1")]) == 1
    assert main(["fit", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "e2")]) == 1
    assert main(["fit", "--out", str(tmp_path / "e3")]) == 1  # no dataset anywhere
    capsys.readouterr()


def test_fit_snapshot_rerun_is_identical(tmp_path):
    sim = _simulate(tmp_path)
    first = _fit(tmp_path, sim / "dataset.jsonl", name="run1")
    second = tmp_path / "run2"
    rc = main(["fit", "--config", str(first / "resolved_config.json"),
               "--out", str(second)])
    assert rc == 0
    assert (first / "trace.jsonl").read_bytes() == (second / "trace.jsonl").read_bytes()
    rep1 = json.loads((first / "report.json").read_text())
    rep2 = json.loads((second / "report.json").read_text())
    rep1.pop("wall_clock_sec")
    rep2.pop("wall_clock_sec")
    assert rep1 == rep2


# ---------------------------------------------------------------------------
# eval


def test_eval_scores_labeled_fit(tmp_path):
    sim = _simulate(tmp_path)
    fit = _fit(tmp_path, sim / "dataset.jsonl")
    out = tmp_path / "ev"
    rc = main(["eval", "--report", str(fit / "report.json"),
               "--data", str(sim / "dataset.jsonl"), "--out", str(out)])
    assert rc == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["purity"] is not None and 0.0 <= metrics["purity"] <= 1.0
    assert metrics["ari"] is not None and -1.0 <= metrics["ari"] <= 1.0
    assert metrics["ell"] is not None  # held-out split exists
    assert metrics["ell_on_train"] is False
    csv = (out / "metrics.csv").read_text().splitlines()
    assert csv[0] == "purity,ari,ell,k_mean"
    assert len(csv) == 2 and csv[1].count(",") == 3


def test_eval_unlabeled_dataset_reports_ell_only(tmp_path):
    sim = _simulate(tmp_path, n=8)
    data = read_jsonl(sim / "dataset.jsonl")
    stripped = Dataset(
        [EventSequence(s.times, s.types, s.horizon, id=s.id, label=None)
         for s in data.sequences],
        data.n_types,
    )
    plain = tmp_path / "plain.jsonl"
    write_jsonl(stripped, plain)
    fit = _fit(tmp_path, plain, name="fit_plain")
    out = tmp_path / "ev_plain"
    rc = main(["eval", "--report", str(fit / "report.json"), "--data", str(plain),
               "--out", str(out)])
    assert rc == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["purity"] is None and metrics["ari"] is None
    assert metrics["ell"] is not None
    row = (out / "metrics.csv").read_text().splitlines()[1]
    assert row.startswith(",,")


def test_eval_train_fallback_for_ell(tmp_path):
    sim = _simulate(tmp_path)
    fit = _fit(tmp_path, sim / "dataset.jsonl", name="fit_all",
               extra=("--eval-fraction", "0.0"))
    report = json.loads((fit / "report.json").read_text())
    assert report["eval_ids"] == []
    out1 = tmp_path / "no_flag"
    assert main(["eval", "--report", str(fit / "report.json"),
                 "--data", str(sim / "dataset.jsonl"), "--out", str(out1)]) == 0
    assert json.loads((out1 / "metrics.json").read_text())["ell"] is None
    out2 = tmp_path / "with_flag"
    assert main(["eval", "--report", str(fit / "report.json"),
                 "--data", str(sim / "dataset.jsonl"), "--ell-on-train",
                 "--out", str(out2)]) == 0
    metrics = json.loads((out2 / "metrics.json").read_text())
    assert metrics["ell"] is not None and metrics["ell_on_train"] is True


def test_eval_requires_matching_dataset(tmp_path):
    sim = _simulate(tmp_path)
    fit = _fit(tmp_path, sim / "dataset.jsonl")
    other = _simulate(tmp_path, name="other", n=3, seed=99)
    rc = main(["eval", "--report", str(fit / "report.json"),
               "--data", str(other / "dataset.jsonl"), "--out", str(tmp_path / "ex")])
    assert rc == 1
    assert main(["eval", "--report", str(tmp_path / "no_report.json"),
                 "--data", str(sim / "dataset.jsonl"),
                 "--out", str(tmp_path / "ey")]) == 1


# ---------------------------------------------------------------------------
# sweep


def test_sweep_grid(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--deltas", "0.3,0.9", "--trials", "1", "--k", "2",
               "--n-per-cluster", "4", "--horizon", "4.0", "--iterations", "15",
               "--burn-in", "5", "--seed", "3", "--out", str(out)])
    assert rc == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "delta,trial,purity,ari"
    assert len(rows) == 3
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert set(summary) == {"0.3", "0.9"}
    for stats in summary.values():
        assert 0.0 <= stats["purity"] <= 1.0
    for delta in ("0.3", "0.9"):
        run = out / f"delta_{delta}" / "trial_0"
        assert (run / "report.json").exists()
        assert (run / "trace.jsonl").exists()


def test_sweep_argument_validation(tmp_path):
    assert main(["sweep", "--deltas", " ", "--out", str(tmp_path / "s1")]) == 1
    assert main(["sweep", "--deltas", "0.5", "--trials", "0",
                 "--out", str(tmp_path / "s2")]) == 1


# ---------------------------------------------------------------------------
# process-level behaviour


def test_numerical_failures_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalError("synthetic failure")

    monkeypatch.setattr(cli, "build_hawkes_delta_dataset", boom)
    rc = main(["simulate", "--recipe", "hawkes-delta", "--k", "2", "--delta", "0.5",
               "--out", str(tmp_path / "boom")])
    assert rc == 2


def test_output_root_environment_variable(tmp_path, monkeypatch):
    root = tmp_path / "root"
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(root))
    rc = main(["simulate", "--recipe", "hawkes-delta", "--k", "2", "--delta", "1.0",
               "--n-per-cluster", "2", "--horizon", "2.0", "--out", "rel_run"])
    assert rc == 0
    assert (root / "rel_run" / "dataset.jsonl").exists()
    absolute = tmp_path / "abs_run"
    rc = main(["simulate", "--recipe", "hawkes-delta", "--k", "2", "--delta", "1.0",
               "--n-per-cluster", "2", "--horizon", "2.0", "--out", str(absolute)])
    assert rc == 0
    assert (absolute / "dataset.jsonl").exists()
    assert not (root / str(absolute).lstrip("/")).exists()


def test_missing_subcommand_is_a_usage_error(capsys):
    with pytest.raises(SystemExit):
        main([])
    capsys.readouterr()


# ---------------------------------------------------------------------------
# helpers behind the commands


def test_label_run_length_coding():
    for labels in ([], [0], [0, 0, 1, 1, 1, 0], list(np.random.default_rng(0).integers(0, 3, 40))):
        arr = np.asarray(labels, dtype=np.int64)
        pairs = _rle(arr)
        assert np.array_equal(_unrle(pairs), arr)
        assert all(count >= 1 for _, count in pairs)


def test_draw_m_init():
    rng = np.random.default_rng(0)
    assert _draw_m_init(3, rng) == 3
    draws = {_draw_m_init([2, 4], rng) for _ in range(200)}
    assert draws == {2, 3, 4}
    with pytest.raises(ConfigError):
        _draw_m_init([4, 2], rng)
    with pytest.raises(ConfigError):
        _draw_m_init([1, 2, 3], rng)


def test_merge_semantics():
    base = {"a": 1, "nest": {"x": 1, "y": 2}}
    merged = _merge(base, {"nest": {"y": 7}})
    assert merged == {"a": 1, "nest": {"x": 1, "y": 7}}
    assert base["nest"]["y"] == 2  # input untouched
    with pytest.raises(ConfigError, match="nest"):
        _merge(base, {"nest": {"z": 0}})


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        FitConfig.resolve(None, {"eval_fraction": 1.0})
    with pytest.raises(ConfigError):
        FitConfig.resolve(None, {"sampler": {"iterations": 5, "burn_in": 9}})
    cfg = FitConfig.resolve(None, {"pretrain": {"m_init": [2, 5]}})
    assert cfg.m_init_spec == [2, 5]
    assert math.isclose(cfg.prior.beta_w, 10.0)
