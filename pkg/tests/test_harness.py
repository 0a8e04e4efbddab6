import json

import numpy as np
import pytest

from csiaug import harness
from csiaug.channel_sim import NonidealityProfile, default_scenario, synthesize_dataset
from csiaug.config import parse_text
from csiaug.core import TensorDims
from csiaug.errors import ConfigError, PreconditionError
from csiaug.harness import (
    ExperimentConfig, check_hygiene, config_from_mapping, fit_cell, meta_path, run_cell, run_experiment,
    run_robustness, split, split_indices,
)
from csiaug.io import read_report
from csiaug.mlp import Standardizer, TrainConfig, encode_dataset, evaluate_mse, init_model, train

from conftest import random_dataset

TINY = TensorDims(2, 1, 2)


def _rows_bytes(ds):
    return sorted(ds.csi[i].tobytes() + ds.labels[i].tobytes() for i in range(len(ds)))


def test_split_counts_and_disjointness(rng):
    ds = random_dataset(rng, TINY, 10)
    tr, te = split(ds, 0.2, seed=1)
    assert (len(tr), len(te)) == (8, 2)
    a, b = split_indices(10, 0.2, 1)
    assert not set(a) & set(b)
    assert split(ds, 0.2, seed=1)[1].equals(te)


def test_split_is_a_multiset_partition(rng):
    for _ in range(10):
        n = int(rng.integers(2, 60))
        ds = random_dataset(rng, TINY, n)
        frac = float(rng.uniform(0.1, 0.6))
        try:
            tr, te = split(ds, frac, int(rng.integers(100)))
        except PreconditionError:
            continue
        merged = _rows_bytes(tr) + _rows_bytes(te)
        assert sorted(merged) == _rows_bytes(ds)


def test_split_degenerate_fraction(rng):
    ds = random_dataset(rng, TINY, 10)
    for frac in (0.0, 1.0, 0.01):
        with pytest.raises(PreconditionError):
            split(ds, frac, 0)
    with pytest.raises(PreconditionError):
        split(random_dataset(rng, TINY, 1), 0.5, 0)


def _synthetic(n, seed=0, env="LOS"):
    return synthesize_dataset(default_scenario(TINY, env, seed=seed, noise_variance=1e-4), n)


def test_run_cell_passthrough_equals_plain_training():
    ds = _synthetic(120)
    tr, te = split(ds, 0.25, 0)
    cfg = TrainConfig(epochs=3, shuffle_seed=5, init_seed=5)
    res = run_cell(tr, te, "none", 1, {}, cfg, seed=5)
    X, Y = encode_dataset(tr)
    sc = Standardizer.fit(X)
    m, _ = train(init_model(X.shape[1], seed=5), sc.transform(X), Y, cfg)
    Xt, Yt = encode_dataset(te)
    assert res.row.test_mse == evaluate_mse(m, sc.transform(Xt), Yt)
    assert res.n_trained == len(tr) and res.row.method == "none" and res.row.multiple == 1
    same = run_cell(tr, te, "phase", 1, {}, cfg, seed=5)
    assert same.row.test_mse == res.row.test_mse


def test_run_cell_trains_on_multiple_times_n():
    ds = _synthetic(5000)
    tr, te = ds.subset(range(4000)), ds.subset(range(4000, 5000))
    res = run_cell(tr, te, "phase", 6, {}, TrainConfig(epochs=1, batch_size=4096), seed=0)
    assert res.n_trained == 24000


def test_run_cell_seed_sensitivity():
    ds = _synthetic(200)
    tr, te = split(ds, 0.2, 0)
    rows = [run_cell(tr, te, "phase", 2, {}, TrainConfig(epochs=2, shuffle_seed=s, init_seed=s), seed=s).row
            for s in (0, 1)]
    assert rows[0].seed != rows[1].seed and rows[0].test_mse != rows[1].test_mse


def test_run_cell_rejects_bad_multiple():
    ds = _synthetic(20)
    with pytest.raises(PreconditionError):
        run_cell(ds, ds, "phase", 0.5, {}, TrainConfig(epochs=1), 0)


def _small_config(**kw):
    base = dict(source=default_scenario(TINY, "LOS", seed=3, noise_variance=1e-4), n_source=5000,
                regime="small", methods=("phase",), multiples=(1, 2), repetitions=1,
                epochs={"none": 1, "phase": 1, "amplitude": 1, "noise": 1}, batch_size=1024)
    base.update(kw)
    return ExperimentConfig(**base)


def test_experiment_grid_size_and_echo(tmp_path):
    cfg = _small_config()
    out = tmp_path / "r.csv"
    rep = run_experiment(cfg, out)
    assert len(rep.rows) == 2
    assert [r.multiple for r in rep.rows] == [1, 2]
    assert rep.config_echo == cfg.echo()
    meta = json.loads(meta_path(out).read_text())
    assert meta["config"] == cfg.echo()
    assert {r["n_trained"] for r in meta["rows"]} == {4000, 8000}
    assert all(r["wall_time_s"] > 0 for r in meta["rows"])
    with open(out) as f:
        assert [r.key for r in read_report(f)] == [r.key for r in rep.rows]


def test_experiment_rerun_is_idempotent(tmp_path, monkeypatch):
    cfg = _small_config(repetitions=2)
    out = tmp_path / "r.json"
    run_experiment(cfg, out)
    first = out.read_bytes()

    def boom(*a, **k):
        raise AssertionError("completed cells must not be retrained")

    monkeypatch.setattr(harness, "run_cell", boom)
    run_experiment(cfg, out)
    assert out.read_bytes() == first
    monkeypatch.undo()

    fresh = tmp_path / "fresh.json"
    run_experiment(cfg, fresh)
    assert fresh.read_bytes() == first


def test_experiment_resumes_missing_rows(tmp_path, monkeypatch):
    cfg = _small_config(repetitions=2)
    out = tmp_path / "r.csv"
    run_experiment(cfg, out)
    full = out.read_text()
    lines = full.splitlines()
    out.write_text("\n".join(lines[:-1]) + "\n")
    calls = []
    real = harness.run_cell
    monkeypatch.setattr(harness, "run_cell", lambda *a, **k: calls.append(1) or real(*a, **k))
    run_experiment(cfg, out)
    assert len(calls) == 1
    assert out.read_text() == full


def test_failed_cell_recorded_and_iteration_continues(tmp_path, monkeypatch):
    cfg = _small_config(multiples=(1, 2, 3))
    real = harness.run_cell

    def flaky(train_set, test_set, method, multiple, *a, **k):
        if multiple == 2:
            raise PreconditionError("synthetic failure")
        return real(train_set, test_set, method, multiple, *a, **k)

    monkeypatch.setattr(harness, "run_cell", flaky)
    out = tmp_path / "r.csv"
    rep = run_experiment(cfg, out)
    assert [r.test_mse is None for r in rep.rows] == [False, True, False]
    assert "LOS,small,2,phase,,0" in out.read_text()
    meta = json.loads(meta_path(out).read_text())
    assert "synthetic failure" in meta["rows"][1]["error"]


def test_regime_too_large_for_source():
    cfg = _small_config(n_source=4500)
    with pytest.raises(PreconditionError):
        run_experiment(cfg)


def test_prefix_subsample(tmp_path):
    ds = _synthetic(100)
    path = tmp_path / "d.csid"
    from csiaug.io import save_csid
    save_csid(ds, path)
    cfg = ExperimentConfig(str(path), regime="custom", n_train=30, subsample="prefix", repetitions=1)
    tr, te = harness.prepare_partitions(cfg, ds)
    full_tr, _ = split_indices(100, 0.2, 0)
    assert tr.tolist() == full_tr[:30].tolist()
    assert not set(tr) & set(te)


def test_hygiene_check():
    check_hygiene(np.array([0, 1, 2]), np.array([3, 4]), np.array([0, 1, 2, 0]))
    with pytest.raises(PreconditionError):
        check_hygiene(np.array([0, 1, 3]), np.array([3, 4]), np.array([0]))


def test_robustness_identity_profile_matches_clean_test():
    sc = default_scenario(TINY, "LOS", seed=3, noise_variance=1e-4)
    cfg = ExperimentConfig(sc, n_source=250, regime="custom", n_train=200, methods=("phase",), multiples=(2,),
                           repetitions=1, epochs={"none": 2, "phase": 2, "amplitude": 2, "noise": 2},
                           nonideality_test=(NonidealityProfile(), NonidealityProfile("uniform")))
    rep = run_robustness(cfg)
    assert [(r.environment, r.method) for r in rep.rows] == [
        ("LOS|clean", "none"), ("LOS|phase-uniform", "none"),
        ("LOS|clean", "phase"), ("LOS|phase-uniform", "phase"),
    ]
    ds = harness.load_source(cfg)
    tr, te = harness.prepare_partitions(cfg, ds)
    clean = run_cell(ds.subset(tr), ds.subset(te), "none", 1, {}, cfg.train_config("none", 0), 0)
    assert rep.rows[0].test_mse == clean.row.test_mse


def test_robustness_preconditions(tmp_path):
    with pytest.raises(PreconditionError):
        run_robustness(_small_config())
    with pytest.raises(PreconditionError):
        run_robustness(ExperimentConfig("x.csid", nonideality_test=NonidealityProfile("uniform")))


def test_config_text_parsing():
    text = """
[experiment]
source = scenario
regime = custom
n_train = 100
multiples = 1, 2, 5
methods = phase, amplitude
p_star_db = small:1.5, large:0.75
epochs_phase = 7
repetitions = 2
standardize = false

[scenario]
m = 4
n_rx = 1
n_ap = 2
env_tag = NLOS
seed = 9
noise_variance = 0.001
n_samples = 200

[nonideality]
phase_drift = uniform
gain_drift_db = 1.5
"""
    cfg = config_from_mapping(parse_text(text))
    assert cfg.multiples == (1.0, 2.0, 5.0) and cfg.methods == ("phase", "amplitude")
    assert cfg.epochs["phase"] == 7 and cfg.epochs["amplitude"] == 150
    assert cfg.p_star_db["large"] == 0.75 and cfg.standardize is False
    assert cfg.n_source == 200 and cfg.source.env_tag == "NLOS" and cfg.source.dims == TensorDims(4, 1, 2)
    assert cfg.nonideality_test == (NonidealityProfile("uniform", 1.5),)


def test_config_defaults_and_preset():
    cfg = config_from_mapping(parse_text("source = data.csid\npreset = preset-ten-percent\n", "experiment"))
    assert cfg.regime == "small" and cfg.methods == ("phase",) and cfg.multiples == (10.0,)
    assert cfg.p_star_for_regime() == 1.5
    assert cfg.repetitions == 5 and cfg.test_fraction == 0.2
    assert cfg.epochs == {"none": 300, "phase": 300, "amplitude": 150, "noise": 150}
    large = ExperimentConfig("x.csid", regime="large")
    assert large.p_star_for_regime() == 0.75 and large.train_size == 40000


def test_config_errors():
    with pytest.raises(ConfigError):
        config_from_mapping(parse_text("source = x.csid\nbogus = 1\n", "experiment"))
    with pytest.raises(ConfigError):
        config_from_mapping(parse_text("preset = nope\n", "experiment"))
    with pytest.raises(ConfigError):
        ExperimentConfig("x.csid", multiples=(0.5,))
    with pytest.raises(ConfigError):
        ExperimentConfig("x.csid", methods=("rotate",))


def test_fit_cell_amplitude_uses_p_star():
    ds = _synthetic(60)
    reg, n = fit_cell(ds, "amplitude", 2, {"p_star_db": 0.75}, TrainConfig(epochs=1), 0)
    assert n == 120
    with pytest.raises(ConfigError):
        fit_cell(ds, "amplitude", 2, {}, TrainConfig(epochs=1), 0)
