"""Experiment orchestration: split, augment the training partition, train, evaluate.

A report file holds exactly the six public columns; everything else a run
produces (resolved config, wall times, RMSE, error messages, per-cell
summaries) goes to a ``<report>.meta.json`` sidecar.
"""

from __future__ import annotations

import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import rng as rngmod
from .augment import METHODS, AugmentPlan, augment, source_indices, target_for_multiple
from .channel_sim import NonidealityProfile, Scenario, apply_nonideality, synthesize_dataset
from .config import as_list, as_map, read_config, scenario_from_mapping, scenario_to_mapping
from .core import Dataset
from .errors import ConfigError, CsiError, PreconditionError
from .io import ReportRow, load_csid, read_report, report_format, write_report
from .mlp import Regressor, Standardizer, TrainConfig, encode_dataset, evaluate_mse, init_model, train

log = logging.getLogger(__name__)

REGIMES = {"small": 4000, "medium": 20000, "large": 40000}
DEFAULT_P_STAR = {"small": 1.5, "medium": 1.5, "large": 0.75, "custom": 1.5}
DEFAULT_EPOCHS = {"none": 300, "phase": 300, "amplitude": 150, "noise": 150}
ALL_METHODS = ("none", *METHODS)


@dataclass
class ExperimentConfig:
    source: str | Scenario
    n_source: int | None = None  # samples to synthesize when source is a Scenario
    regime: str = "small"
    n_train: int | None = None  # only for regime "custom"
    multiples: tuple[float, ...] = (1, 2, 3, 4, 5, 6)
    method_multiples: dict[str, tuple[float, ...]] = field(default_factory=dict)
    methods: tuple[str, ...] = ("phase",)
    p_star_db: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_P_STAR))
    noise_variance: float = 1.0
    epochs: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_EPOCHS))
    batch_size: int = 128
    learning_rate: float = 1e-3
    test_fraction: float = 0.2
    split_seed: int = 0
    repetitions: int = 5
    seed: int = 0
    subsample: str = "random"
    standardize: bool = True
    nonideality_test: tuple[NonidealityProfile, ...] = ()
    workers: int = 1

    def __post_init__(self):
        self.multiples = tuple(sorted(float(m) for m in self.multiples))
        self.method_multiples = {k: tuple(sorted(float(m) for m in v)) for k, v in self.method_multiples.items()}
        self.methods = tuple(self.methods)
        if isinstance(self.nonideality_test, NonidealityProfile):
            self.nonideality_test = (self.nonideality_test,)
        self.nonideality_test = tuple(self.nonideality_test)
        bad = set(self.methods) - set(ALL_METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if any(m < 1 for ms in [self.multiples, *self.method_multiples.values()] for m in ms):
            raise ConfigError("multiples must be >= 1")
        if self.regime not in (*REGIMES, "custom"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.regime == "custom" and not self.n_train:
            raise ConfigError("regime 'custom' needs n_train")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.subsample not in ("random", "prefix"):
            raise ConfigError("subsample must be 'random' or 'prefix'")

    @property
    def train_size(self) -> int:
        return int(self.n_train) if self.regime == "custom" else REGIMES[self.regime]

    def multiples_for(self, method: str) -> tuple[float, ...]:
        if method == "none":
            return (1.0,)
        return self.method_multiples.get(method, self.multiples)

    def p_star_for_regime(self) -> float:
        return float(self.p_star_db.get(self.regime, DEFAULT_P_STAR.get(self.regime, 1.5)))

    def train_config(self, method: str, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=int(self.epochs.get(method, DEFAULT_EPOCHS[method])),
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            shuffle_seed=seed,
            init_seed=seed,
        )

    def echo(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["source"] = scenario_to_mapping(self.source) if isinstance(self.source, Scenario) else str(self.source)
        d["nonideality_test"] = [asdict(p) for p in self.nonideality_test]
        d["method_multiples"] = {k: list(v) for k, v in self.method_multiples.items()}
        d["multiples"] = list(self.multiples)
        d["methods"] = list(self.methods)
        d["train_size"] = self.train_size
        d["optimizer"] = {"name": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
        return json.loads(json.dumps(d, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


PRESETS: dict[str, dict[str, Any]] = {
    "preset-ten-percent": {"regime": "small", "methods": ("phase",), "multiples": (10,)},
}


def config_from_mapping(sections: dict[str, dict[str, Any]], base_dir: Path | None = None) -> ExperimentConfig:
    """Resolve an ``[experiment]`` section (plus optional ``[scenario]``) into a config."""
    exp = dict(sections.get("experiment") or sections.get("main") or {})
    kw: dict[str, Any] = {}
    preset = exp.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        kw.update(PRESETS[preset])

    source = exp.pop("source", "scenario")
    if source == "scenario":
        if "scenario" not in sections:
            raise ConfigError("source = scenario needs a [scenario] section")
        sc = dict(sections["scenario"])
        n = sc.pop("n_samples", None)
        kw["source"] = scenario_from_mapping(sc)
        kw["n_source"] = int(exp.pop("n_source", n or 0)) or None
    else:
        p = Path(str(source))
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        kw["source"] = str(p)
        exp.pop("n_source", None)

    for k in ("regime", "subsample"):
        if k in exp:
            kw[k] = str(exp.pop(k))
    for k in ("n_train", "batch_size", "split_seed", "repetitions", "seed", "workers"):
        if k in exp:
            kw[k] = int(exp.pop(k))
    for k in ("learning_rate", "test_fraction", "noise_variance"):
        if k in exp:
            kw[k] = float(exp.pop(k))
    if "standardize" in exp:
        kw["standardize"] = bool(exp.pop("standardize"))
    if "multiples" in exp:
        kw["multiples"] = tuple(float(m) for m in as_list(exp.pop("multiples")))
    if "methods" in exp:
        kw["methods"] = tuple(str(m) for m in as_list(exp.pop("methods")))
    if "p_star_db" in exp:
        v = exp.pop("p_star_db")
        kw["p_star_db"] = {**DEFAULT_P_STAR, **({r: float(v) for r in DEFAULT_P_STAR} if isinstance(v, (int, float)) else as_map(v))}
    epochs = dict(DEFAULT_EPOCHS)
    if "epochs" in exp:
        v = exp.pop("epochs")
        epochs.update({m: int(v) for m in epochs} if isinstance(v, (int, float)) else as_map(v, int))
    for m in ALL_METHODS:
        if f"epochs_{m}" in exp:
            epochs[m] = int(exp.pop(f"epochs_{m}"))
    kw["epochs"] = epochs
    mm = {}
    for m in METHODS:
        if f"multiples_{m}" in exp:
            mm[m] = tuple(float(x) for x in as_list(exp.pop(f"multiples_{m}")))
    kw["method_multiples"] = mm

    profiles = []
    for name, sec in sections.items():
        if name.startswith("nonideality"):
            profiles.append(NonidealityProfile(
                str(sec.get("phase_drift", "none")),
                None if sec.get("gain_drift_db") in (None, "none") else float(sec["gain_drift_db"]),
            ))
    kw["nonideality_test"] = tuple(profiles)
    if exp:
        raise ConfigError(f"unknown experiment keys: {sorted(exp)}")
    return ExperimentConfig(**kw)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return config_from_mapping(read_config(path, default_section="experiment"), path.parent)


# --- data partitioning ------------------------------------------------------


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise PreconditionError("need at least 2 samples to split")
    if not 0 < test_fraction < 1:
        raise PreconditionError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise PreconditionError(f"test_fraction {test_fraction} leaves an empty partition for N={n}")
    perm = rngmod.substream(seed, rngmod.SPLIT).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded train/test partition."""
    tr, te = split_indices(len(dataset), test_fraction, seed)
    return dataset.subset(tr), dataset.subset(te)


def subsample_indices(n: int, k: int, mode: str, seed: int) -> np.ndarray:
    if k > n:
        raise PreconditionError(f"regime needs {k} training samples, only {n} available")
    if mode == "prefix":
        return np.arange(k)
    return np.sort(rngmod.substream(seed, rngmod.SUBSAMPLE).permutation(n)[:k])


def check_hygiene(train_idx: np.ndarray, test_idx: np.ndarray, aug_sources: np.ndarray) -> None:
    """Raise if any training or augmentation source index is a test index."""
    test = set(np.asarray(test_idx).tolist())
    if test & set(np.asarray(train_idx).tolist()):
        raise PreconditionError("train and test partitions overlap")
    if test & set(np.asarray(train_idx)[aug_sources].tolist()):
        raise PreconditionError("an augmented sample was derived from a test sample")


# --- cells ------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    row: ReportRow
    wall_time_s: float
    n_trained: int
    rmse: float | None = None
    error: str | None = None
    extra_mse: dict[str, float] = field(default_factory=dict)


def fit_cell(
    train_set: Dataset,
    method: str,
    multiple: float,
    params: dict[str, float],
    train_config: TrainConfig,
    seed: int,
    standardize: bool = True,
    workers: int = 1,
) -> tuple[Regressor, int]:
    """Augment (train partition only), encode, standardize on the augmented set and train."""
    n = len(train_set)
    target = target_for_multiple(multiple, n)
    if method == "none" or target == n:
        data = train_set
    else:
        plan = AugmentPlan(
            method, target,
            p_star_db=params.get("p_star_db"),
            noise_variance=params.get("noise_variance", 1.0),
            seed=seed,
        )
        data = augment(train_set, plan, workers=workers)
    X, Y = encode_dataset(data)
    scaler = Standardizer.fit(X) if standardize else None
    if scaler is not None:
        X = scaler.transform(X)
    model = init_model(X.shape[1], seed=train_config.init_seed)
    model, _ = train(model, X, Y, train_config)
    return Regressor(model, scaler, train_config.shuffle_seed), len(data)


def run_cell(
    train_set: Dataset,
    test_set: Dataset,
    method: str,
    multiple: float,
    params: dict[str, float],
    train_config: TrainConfig,
    seed: int,
    regime: str = "custom",
    standardize: bool = True,
    workers: int = 1,
    environment: str | None = None,
) -> CellResult:
    """Train one ``(method, multiple)`` model and score it on the untouched test set."""
    if multiple < 1:
        raise PreconditionError("multiple must be >= 1")
    t0 = time.perf_counter()
    reg, n_trained = fit_cell(train_set, method, multiple, params, train_config, seed, standardize, workers)
    mse = reg.mse(test_set)
    row = ReportRow(environment or train_set.env_tag, regime, _num(multiple), method, mse, seed)
    return CellResult(row, time.perf_counter() - t0, n_trained, float(np.sqrt(mse)))


def _num(m: float):
    m = float(m)
    return int(m) if m.is_integer() else m


# --- experiments -------------------------------------------------------------


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    config_echo: dict[str, Any]
    meta: dict[tuple, dict[str, Any]] = field(default_factory=dict)

    def summary(self) -> list[dict[str, Any]]:
        """Median/min/max test MSE over repetitions for each grid cell."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            k = (r.environment, r.regime, r.method, float(r.multiple))
            if r.test_mse is not None:
                groups.setdefault(k, []).append(r.test_mse)
        out = []
        for (env, regime, method, mult), vals in groups.items():
            out.append({
                "environment": env, "regime": regime, "method": method, "multiple": _num(mult),
                "n": len(vals), "median_mse": statistics.median(vals),
                "min_mse": min(vals), "max_mse": max(vals),
                "median_rmse": float(np.sqrt(statistics.median(vals))),
            })
        return out

    def median(self, method: str, multiple: float, environment: str | None = None) -> float:
        vals = [r.test_mse for r in self.rows
                if r.method == method and float(r.multiple) == float(multiple)
                and r.test_mse is not None and (environment is None or r.environment == environment)]
        if not vals:
            raise KeyError((method, multiple, environment))
        return statistics.median(vals)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        _atomic_write(path, lambda f: write_report(self.rows, f, report_format(path)))
        meta = {
            "config": self.config_echo,
            "rows": [{**asdict(r), "key": list(r.key), **self.meta.get(r.key, {})} for r in self.rows],
            "summary": self.summary(),
        }
        _atomic_write(meta_path(path), lambda f: f.write(json.dumps(meta, indent=2, sort_keys=True) + "\n"))


def meta_path(report_path: str | Path) -> Path:
    return Path(str(report_path) + ".meta.json")


def _atomic_write(path: Path, fn) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as f:
        fn(f)
    os.replace(tmp, path)


def _load_existing(path: Path | None) -> tuple[dict[tuple, ReportRow], dict[tuple, dict]]:
    if path is None or not path.exists():
        return {}, {}
    with open(path) as f:
        rows = read_report(f, report_format(path))
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        for m in json.loads(mp.read_text()).get("rows", []):
            k = tuple(m.pop("key"))
            meta[k] = {x: m[x] for x in ("wall_time_s", "n_trained", "rmse", "error", "profile") if x in m}
    done = {r.key: r for r in rows if r.test_mse is not None}
    return done, meta


def load_source(config: ExperimentConfig) -> Dataset:
    if isinstance(config.source, Scenario):
        n = config.n_source
        if not n:
            n = int(np.ceil(config.train_size / (1 - config.test_fraction)))
        return synthesize_dataset(config.source, n, workers=config.workers)
    return load_csid(config.source)


def prepare_partitions(config: ExperimentConfig, dataset: Dataset):
    """Split, then draw the regime's training subset from the train partition."""
    tr_idx, te_idx = split_indices(len(dataset), config.test_fraction, config.split_seed)
    k = config.train_size
    if k + len(te_idx) > len(dataset):
        raise PreconditionError(
            f"regime size {k} + test size {len(te_idx)} exceeds source size {len(dataset)}"
        )
    sub = subsample_indices(len(tr_idx), k, config.subsample, config.split_seed)
    tr_idx = tr_idx[sub]
    return tr_idx, te_idx


def _grid(config: ExperimentConfig):
    for method in config.methods:
        for mult in config.multiples_for(method):
            for rep in range(config.repetitions):
                yield method, mult, config.seed + rep


def _params(config: ExperimentConfig) -> dict[str, float]:
    return {"p_star_db": config.p_star_for_regime(), "noise_variance": config.noise_variance}


def run_experiment(config: ExperimentConfig, out_path: str | Path | None = None) -> ExperimentReport:
    """Run the full method x multiple x repetition grid.

    With ``out_path`` the report is rewritten after each cell; rows already
    present in an existing report (same identity, non-failed) are reused.
    """
    out = Path(out_path) if out_path is not None else None
    done, old_meta = _load_existing(out)
    dataset = load_source(config)
    tr_idx, te_idx = prepare_partitions(config, dataset)
    train_set, test_set = dataset.subset(tr_idx), dataset.subset(te_idx)
    env = dataset.env_tag
    params = _params(config)

    report = ExperimentReport([], config.echo())
    for method, mult, seed in _grid(config):
        key = ReportRow(env, config.regime, _num(mult), method, None, seed).key
        if key in done:
            report.rows.append(done[key])
            report.meta[key] = old_meta.get(key, {})
            continue
        check_hygiene(tr_idx, te_idx, source_indices(len(tr_idx), target_for_multiple(mult, len(tr_idx))))
        try:
            res = run_cell(train_set, test_set, method, mult, params, config.train_config(method, seed),
                           seed, config.regime, config.standardize, config.workers)
            report.rows.append(res.row)
            report.meta[key] = {"wall_time_s": res.wall_time_s, "n_trained": res.n_trained, "rmse": res.rmse}
            log.info("%s %s x%s seed=%d mse=%.6f (%.1fs)", env, method, mult, seed, res.row.test_mse, res.wall_time_s)
        except (CsiError, ValueError, FloatingPointError) as e:
            report.rows.append(ReportRow(env, config.regime, _num(mult), method, None, seed))
            report.meta[key] = {"error": f"{type(e).__name__}: {e}"}
            log.warning("cell %s failed: %s", key, e)
        if out is not None:
            report.write(out)
    return report


def run_robustness(config: ExperimentConfig, out_path: str | Path | None = None) -> ExperimentReport:
    """Train on clean data, test on nonideality-perturbed copies of one test set.

    Every repetition trains an unaugmented model plus one model per
    ``(method, multiple)``; all of them are scored on the same perturbed test
    set for each profile. Rows carry the profile in ``environment`` as
    ``<env_tag>|<profile>``.
    """
    if not config.nonideality_test:
        raise PreconditionError("robustness run needs at least one nonideality profile")
    if not isinstance(config.source, Scenario):
        raise PreconditionError("robustness run needs a synthetic scenario source")
    out = Path(out_path) if out_path is not None else None
    done, old_meta = _load_existing(out)
    dataset = load_source(config)
    tr_idx, te_idx = prepare_partitions(config, dataset)
    train_set, clean_test = dataset.subset(tr_idx), dataset.subset(te_idx)
    tests = {p.tag(): apply_nonideality(clean_test, p, config.split_seed) for p in config.nonideality_test}
    env = dataset.env_tag
    params = _params(config)

    cells = [("none", 1.0)] + [(m, x) for m in config.methods if m != "none" for x in config.multiples_for(m)]
    report = ExperimentReport([], config.echo())
    for rep in range(config.repetitions):
        seed = config.seed + rep
        for method, mult in cells:
            keys = {tag: ReportRow(f"{env}|{tag}", config.regime, _num(mult), method, None, seed).key
                    for tag in tests}
            if all(k in done for k in keys.values()):
                for k in keys.values():
                    report.rows.append(done[k])
                    report.meta[k] = old_meta.get(k, {})
                continue
            t0 = time.perf_counter()
            try:
                reg, n_trained = fit_cell(train_set, method, mult, params, config.train_config(method, seed),
                                          seed, config.standardize, config.workers)
                wall = time.perf_counter() - t0
                for tag, test in tests.items():
                    mse = reg.mse(test)
                    row = ReportRow(f"{env}|{tag}", config.regime, _num(mult), method, mse, seed)
                    report.rows.append(row)
                    report.meta[row.key] = {"wall_time_s": wall, "n_trained": n_trained,
                                            "rmse": float(np.sqrt(mse)), "profile": tag}
                    log.info("%s %s x%s seed=%d mse=%.6f", row.environment, method, mult, seed, mse)
            except (CsiError, ValueError, FloatingPointError) as e:
                for tag, k in keys.items():
                    report.rows.append(ReportRow(f"{env}|{tag}", config.regime, _num(mult), method, None, seed))
                    report.meta[k] = {"error": f"{type(e).__name__}: {e}", "profile": tag}
            if out is not None:
                report.write(out)
    return report

