"""Command-line front end: generation, training, evaluation, reporting.

Subcommands
-----------

    oplearn gen-data  --config cfg.json --train --test
    oplearn train     --config cfg.json --model frechet|deeponet [--x 0.5|all]
    oplearn evaluate  --config cfg.json
    oplearn oracle    --config cfg.json --case zero-c|const-c|custom [--kappa K]
    oplearn basis     --config cfg.json --dump-grid LO HI N [--samples K]
                      [--sample-seed S]

Exit codes: 0 success, 1 validation failure, 2 numeric/oracle failure,
3 I/O failure.

Config file schema (JSON, version 1)
------------------------------------

Every key except ``version`` is optional and falls back to the default in
parentheses; unknown keys are rejected.

    version        schema version, must be 1
    n_basis        basis truncation (5)
    bound          coefficient cube half-width (5.0)
    x_grid         strictly increasing evaluation points ([-1,-0.5,0,0.5,1])
    t, T           time window (0.0, 1.0)
    n_steps        Riemann/Euler steps per path (100)
    m_train        training records (200000)
    m_test         test records (2000)
    oracle_paths   Monte Carlo paths per test truth (10000)
    frechet        {"width": 15, "depth": 2}
    deeponet       {"width": 50, "n_sensors": 20,
                    "sensor_lo": -4.0, "sensor_hi": 4.0}
    train_frechet  {"epochs": 25, "batch_size": 10000,
                    "learning_rate": 0.04, "lr_schedule": "cosine",
                    "optimizer": "adam", "init_scale": 4.0,
                    "adam_beta1": 0.9, "adam_beta2": 0.999,
                    "adam_eps": 1e-8, "train_activation": true}
    train_deeponet same keys minus train_activation
                   (defaults learning_rate 0.01, adam_beta2 0.99,
                    init_scale 1.0)
                   lr_schedule is "constant" or "cosine" (half-cosine
                   annealing to a near-zero final-epoch rate)
    seeds          {"dataset": 11, "init": 14, "shuffle": 23}
    output_dir     artifact directory ("runs/desk")

Determinism and lineage
-----------------------

The config (minus ``output_dir``) is hashed; every artifact is listed in
``manifest.json`` under that hash with its own sha256, and ``evaluate``
refuses artifacts whose lineage does not match.  Wall-clock timings go to
the untracked sidecar ``timings.json`` so that reports, tables and the
manifest are byte-identical across reruns.  The training file consumes
coefficient/increment streams keyed by ``seeds.dataset``; the test file uses
``seeds.dataset + 1`` so its coefficient draws are disjoint from training.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .dataset import (generate_test_set, generate_training_set, load_dataset,
                      read_header, stream_batches)
from .deeponet import (SensorGrid, forward_don_batch, load_checkpoint_don,
                       save_checkpoint_don, sensor_matrix, train_don)
from .errors import (CheckpointError, ConfigError, ConstructionError,
                     ContractError, DataFormatError, NumericError,
                     SimulationError)
from .frechet_net import (TrainConfig, forward_batch, load_checkpoint,
                          save_checkpoint, train)
from .sobolev_basis import (CompactSetSpec, build_basis, evaluate_many,
                            sample_compact)
from .stochastic import PathConfig, ProblemSpec, mc_solution

CONFIG_VERSION = 1
HISTOGRAM_BINS = 30
QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
QUANTILE_NAMES = ("min", "q1", "median", "q3", "max")

TRAIN_FILE = "train.bin"
TEST_FILE = "test.bin"
DEEPONET_CKPT = "deeponet.ckpt"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"
TIMINGS_FILE = "timings.json"

# Stream tags under seeds.dataset: 0 = record ranges, 1 = test oracles
# (both owned by the dataset module), 2 = closed-form oracle command.
_ORACLE_CMD_TAG = 2


def _square(y):
    y = np.asarray(y, dtype=np.float64)
    return y * y


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    """Per-model training knobs as they appear in the config file."""

    epochs: int = 25
    batch_size: int = 10000
    learning_rate: float = 1e-2
    lr_schedule: str = "constant"
    optimizer: str = "adam"
    init_scale: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_activation: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (math.isfinite(self.learning_rate)
                and self.learning_rate > 0):
            raise ConfigError("learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(
                f"unknown lr schedule {self.lr_schedule!r}")
        if self.optimizer not in ("adam", "plain-sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (math.isfinite(self.init_scale) and self.init_scale > 0):
            raise ConfigError("init_scale must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")

    def to_train_config(self, shuffle_seed) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate,
                           lr_schedule=self.lr_schedule,
                           optimizer=self.optimizer,
                           adam_beta1=self.adam_beta1,
                           adam_beta2=self.adam_beta2,
                           adam_eps=self.adam_eps,
                           init_scale=self.init_scale, seed=shuffle_seed,
                           train_activation=self.train_activation)


# Desk-calibrated optimizer settings; the single source for both the
# ExperimentConfig defaults and the fallback of partial config files.
FRECHET_TRAIN_DEFAULTS = TrainSettings(
    learning_rate=0.04, lr_schedule="cosine", init_scale=4.0,
    train_activation=True)
DEEPONET_TRAIN_DEFAULTS = TrainSettings(learning_rate=1e-2, adam_beta2=0.99)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full run depends on, minus wall-clock noise."""

    n_basis: int = 5
    bound: float = 5.0
    x_grid: Tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    t: float = 0.0
    T: float = 1.0
    n_steps: int = 100
    m_train: int = 200000
    m_test: int = 2000
    oracle_paths: int = 10000
    frechet_width: int = 15
    frechet_depth: int = 2
    deeponet_width: int = 50
    n_sensors: int = 20
    sensor_lo: float = -4.0
    sensor_hi: float = 4.0
    train_frechet: TrainSettings = FRECHET_TRAIN_DEFAULTS
    train_deeponet: TrainSettings = DEEPONET_TRAIN_DEFAULTS
    seed_dataset: int = 11
    seed_init: int = 14
    seed_shuffle: int = 23
    output_dir: str = "runs/desk"

    def __post_init__(self):
        object.__setattr__(self, "x_grid",
                           tuple(float(x) for x in self.x_grid))
        counts = ("n_basis", "n_steps", "m_train", "m_test", "oracle_paths",
                  "frechet_width", "frechet_depth", "deeponet_width")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_sensors < 2:
            raise ConfigError("n_sensors must be >= 2")
        if not self.x_grid:
            raise ConfigError("x_grid must be non-empty")
        if any(not math.isfinite(x) for x in self.x_grid):
            raise ConfigError("x_grid must be finite")
        if any(b <= a for a, b in zip(self.x_grid, self.x_grid[1:])):
            raise ConfigError("x_grid must be strictly increasing")
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise ConfigError("bound must be positive")
        if not (math.isfinite(self.t) and math.isfinite(self.T)
                and self.t < self.T):
            raise ConfigError("t must precede T")
        if not self.sensor_lo < self.sensor_hi:
            raise ConfigError("sensor_lo must be below sensor_hi")
        for name in ("seed_dataset", "seed_init", "seed_shuffle"):
            value = getattr(self, name)
            if not 0 <= value < 2 ** 63:
                raise ConfigError(f"{name} must be in [0, 2**63)")
        if self.train_deeponet.train_activation:
            raise ConfigError(
                "train_activation does not apply to the deeponet model")
        if not self.output_dir:
            raise ConfigError("output_dir must be non-empty")

    @property
    def n_x(self) -> int:
        return len(self.x_grid)

    @property
    def seed_dataset_test(self) -> int:
        """Test-file stream seed, offset so draws are disjoint from training."""
        return (self.seed_dataset + 1) % 2 ** 64


_TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "lr_schedule",
               "optimizer", "init_scale", "adam_beta1", "adam_beta2",
               "adam_eps", "train_activation")
_TOP_KEYS = ("version", "n_basis", "bound", "x_grid", "t", "T", "n_steps",
             "m_train", "m_test", "oracle_paths", "frechet", "deeponet",
             "train_frechet", "train_deeponet", "seeds", "output_dir")


def _require_mapping(raw, key):
    if not isinstance(raw, dict):
        raise ConfigError(f"{key}: expected an object")
    return raw


def _train_settings(raw, key, allow_activation) -> TrainSettings:
    _require_mapping(raw, key)
    allowed = set(_TRAIN_KEYS) - (set() if allow_activation
                                  else {"train_activation"})
    for sub in raw:
        if sub not in allowed:
            raise ConfigError(f"{key}: unknown key {sub!r}")
    base = FRECHET_TRAIN_DEFAULTS if allow_activation \
        else DEEPONET_TRAIN_DEFAULTS
    return dataclasses.replace(base, **raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from its file form."""
    _require_mapping(raw, "config")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(
            f"version: expected {CONFIG_VERSION}, got {raw.get('version')!r}")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}")
    fields: Dict = {}
    for key in ("n_basis", "bound", "x_grid", "t", "T", "n_steps", "m_train",
                "m_test", "oracle_paths", "output_dir"):
        if key in raw:
            fields[key] = raw[key]
    arch = _require_mapping(raw.get("frechet", {}), "frechet")
    for sub in arch:
        if sub not in ("width", "depth"):
            raise ConfigError(f"frechet: unknown key {sub!r}")
    fields["frechet_width"] = arch.get("width", 15)
    fields["frechet_depth"] = arch.get("depth", 2)
    arch = _require_mapping(raw.get("deeponet", {}), "deeponet")
    for sub in arch:
        if sub not in ("width", "n_sensors", "sensor_lo", "sensor_hi"):
            raise ConfigError(f"deeponet: unknown key {sub!r}")
    fields["deeponet_width"] = arch.get("width", 50)
    fields["n_sensors"] = arch.get("n_sensors", 20)
    fields["sensor_lo"] = arch.get("sensor_lo", -4.0)
    fields["sensor_hi"] = arch.get("sensor_hi", 4.0)
    fields["train_frechet"] = _train_settings(
        raw.get("train_frechet", {}), "train_frechet", True)
    fields["train_deeponet"] = _train_settings(
        raw.get("train_deeponet", {}), "train_deeponet", False)
    seeds = _require_mapping(raw.get("seeds", {}), "seeds")
    for sub in seeds:
        if sub not in ("dataset", "init", "shuffle"):
            raise ConfigError(f"seeds: unknown key {sub!r}")
    fields["seed_dataset"] = seeds.get("dataset", 11)
    fields["seed_init"] = seeds.get("init", 14)
    fields["seed_shuffle"] = seeds.get("shuffle", 23)
    try:
        return ExperimentConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """File form of a config; feeding it back reproduces the config."""
    return {
        "version": CONFIG_VERSION,
        "n_basis": cfg.n_basis,
        "bound": cfg.bound,
        "x_grid": list(cfg.x_grid),
        "t": cfg.t,
        "T": cfg.T,
        "n_steps": cfg.n_steps,
        "m_train": cfg.m_train,
        "m_test": cfg.m_test,
        "oracle_paths": cfg.oracle_paths,
        "frechet": {"width": cfg.frechet_width, "depth": cfg.frechet_depth},
        "deeponet": {"width": cfg.deeponet_width,
                     "n_sensors": cfg.n_sensors,
                     "sensor_lo": cfg.sensor_lo,
                     "sensor_hi": cfg.sensor_hi},
        "train_frechet": dataclasses.asdict(cfg.train_frechet),
        "train_deeponet": {k: v for k, v in
                           dataclasses.asdict(cfg.train_deeponet).items()
                           if k != "train_activation"},
        "seeds": {"dataset": cfg.seed_dataset, "init": cfg.seed_init,
                  "shuffle": cfg.seed_shuffle},
        "output_dir": cfg.output_dir,
    }


def _key_line(text: str, message: str) -> int:
    """Line of the first config key a validation message mentions, else 1."""
    lines = text.splitlines()
    for token in re.findall(r"[A-Za-z_][A-Za-z_0-9]*", message):
        for lineno, line in enumerate(lines, 1):
            if f'"{token}"' in line:
                return lineno
    return 1


def load_config(path) -> ExperimentConfig:
    """Read, parse and validate a config file with line-precise messages."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") \
            from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}:{_key_line(text, str(exc))}: {exc}") \
            from None


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical config form, excluding the output directory."""
    form = config_to_dict(cfg)
    del form["output_dir"]
    canon = json.dumps(form, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("ascii")).hexdigest()


# --------------------------------------------------------------------------
# manifest and sidecars
# --------------------------------------------------------------------------

def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(out_dir) -> Optional[dict]:
    path = os.path.join(out_dir, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        man = json.load(fh)
    if not (isinstance(man, dict) and isinstance(man.get("config_hash"), str)
            and isinstance(man.get("artifacts"), dict)):
        raise DataFormatError(f"{path}: malformed manifest")
    return man


def update_manifest(cfg: ExperimentConfig, roles: Dict[str, str]):
    """Record artifacts (name -> role) under the config's hash."""
    digest = config_hash(cfg)
    man = load_manifest(cfg.output_dir)
    if man is None:
        man = {"config_hash": digest, "artifacts": {}}
    elif man["config_hash"] != digest:
        raise ConfigError(
            f"{cfg.output_dir} holds artifacts for config "
            f"{man['config_hash'][:12]}, current config is {digest[:12]}; "
            "use a fresh output directory")
    for name, role in sorted(roles.items()):
        man["artifacts"][name] = {
            "role": role,
            "sha256": _sha256_file(os.path.join(cfg.output_dir, name))}
    _write_json(os.path.join(cfg.output_dir, MANIFEST_FILE), man)


def require_artifact(cfg: ExperimentConfig, name: str) -> str:
    """Path of a manifest-tracked artifact, verified against its recorded
    config hash and content digest."""
    man = load_manifest(cfg.output_dir)
    if man is None:
        raise ConfigError(f"{cfg.output_dir}: no manifest; "
                          "run gen-data/train first")
    digest = config_hash(cfg)
    if man["config_hash"] != digest:
        raise ConfigError(
            f"{name} was produced by config {man['config_hash'][:12]}, "
            f"current config is {digest[:12]}")
    if name not in man["artifacts"]:
        raise ConfigError(f"{name} is not in the manifest; "
                          "generate it first")
    path = os.path.join(cfg.output_dir, name)
    if not os.path.exists(path):
        raise ConfigError(f"{name} listed in the manifest but missing "
                          "on disk")
    if _sha256_file(path) != man["artifacts"][name]["sha256"]:
        raise ConfigError(f"{name} does not match its manifest digest; "
                          "regenerate it")
    return path


def _merge_timings(out_dir, updates: Dict[str, float]):
    path = os.path.join(out_dir, TIMINGS_FILE)
    data = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    data.update(updates)
    _write_json(path, data)


def _ensure_outdir(cfg: ExperimentConfig):
    os.makedirs(cfg.output_dir, exist_ok=True)


# --------------------------------------------------------------------------
# shared experiment pieces
# --------------------------------------------------------------------------

def experiment_problem(cfg: ExperimentConfig) -> ProblemSpec:
    """Squared final datum, zero source, exact Brownian dynamics.

    The potential slot is a placeholder: generation substitutes each
    record's own sampled basis expansion.
    """
    return ProblemSpec(phi=_square, c=lambda y: np.zeros_like(
        np.asarray(y, dtype=np.float64)), T=cfg.T)


def _frechet_ckpt(j: int) -> str:
    return f"frechet_x{j}.ckpt"


def _frechet_loss_csv(j: int) -> str:
    return f"loss_frechet_x{j}.csv"


def _check_dataset_header(cfg: ExperimentConfig, header, is_test: bool):
    kind = "test" if is_test else "training"
    expected = {
        "n_basis": (header.n_basis, cfg.n_basis),
        "x_grid": (header.x_grid, cfg.x_grid),
        "n_records": (header.n_records,
                      cfg.m_test if is_test else cfg.m_train),
        "seed": (header.seed, cfg.seed_dataset_test if is_test
                 else cfg.seed_dataset),
        "n_steps": (header.n_steps, cfg.n_steps),
        "t": (header.t, cfg.t),
        "T": (header.T, cfg.T),
    }
    for name, (got, want) in expected.items():
        if got != want:
            raise ConfigError(
                f"{kind} file {name} is {got!r}, config implies {want!r}")
    if header.is_test != is_test:
        raise ConfigError(f"expected a {kind} file")


def _parse_x_selection(cfg: ExperimentConfig, text: str):
    if text == "all":
        return list(range(cfg.n_x))
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"--x must be a grid value or 'all', got {text!r}") \
            from None
    for j, x in enumerate(cfg.x_grid):
        if x == value:
            return [j]
    raise ConfigError(
        f"--x {text} is not on the grid {list(cfg.x_grid)}")


def _write_loss_csv(path, losses):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(losses, 1):
            writer.writerow([epoch, repr(float(loss))])


# --------------------------------------------------------------------------
# gen-data
# --------------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, do_train: bool, do_test: bool) -> int:
    if not (do_train or do_test):
        raise ConfigError("pass --train and/or --test")
    _ensure_outdir(cfg)
    spec = experiment_problem(cfg)
    compact = CompactSetSpec(n_basis=cfg.n_basis, bound=cfg.bound)
    roles, timings = {}, {}
    if do_train:
        pcfg = PathConfig(t_start=cfg.t, t_end=cfg.T, n_steps=cfg.n_steps,
                          x0=0.0)
        start = time.perf_counter()
        header = generate_training_set(
            cfg.m_train, spec, compact, pcfg, cfg.seed_dataset,
            os.path.join(cfg.output_dir, TRAIN_FILE), x_grid=cfg.x_grid)
        timings["gen_train_seconds"] = time.perf_counter() - start
        roles[TRAIN_FILE] = "training-data"
        print(f"wrote {TRAIN_FILE}: {header.n_records} records, "
              f"{header.n_basis} coefficients, x-grid {list(header.x_grid)}")
    if do_test:
        start = time.perf_counter()
        header = generate_test_set(
            cfg.m_test, spec, compact, cfg.oracle_paths, cfg.n_steps,
            cfg.seed_dataset_test, os.path.join(cfg.output_dir, TEST_FILE),
            x_grid=cfg.x_grid, t=cfg.t)
        timings["gen_test_seconds"] = time.perf_counter() - start
        roles[TEST_FILE] = "test-data"
        print(f"wrote {TEST_FILE}: {header.n_records} records with "
              f"{cfg.oracle_paths}-path oracle truths")
    update_manifest(cfg, roles)
    _merge_timings(cfg.output_dir, timings)
    return 0


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, model: str, x_selection: str) -> int:
    train_path = require_artifact(cfg, TRAIN_FILE)
    with open(train_path, "rb") as fh:
        _check_dataset_header(cfg, read_header(fh), is_test=False)
    roles, timings = {}, {}
    if model == "frechet":
        settings = cfg.train_frechet
        tc = settings.to_train_config(cfg.seed_shuffle)
        for j in _parse_x_selection(cfg, x_selection):
            def source(epoch, j=j):
                for coeffs, targets in stream_batches(
                        train_path, tc.batch_size, cfg.seed_shuffle, epoch):
                    yield coeffs, targets[:, j]
            start = time.perf_counter()
            params, losses = train(source, tc, [cfg.seed_init, 0, j],
                                   n_basis=cfg.n_basis,
                                   depth=cfg.frechet_depth,
                                   width=cfg.frechet_width)
            timings[f"train_frechet_x{j}_seconds"] = \
                time.perf_counter() - start
            save_checkpoint(params,
                            os.path.join(cfg.output_dir, _frechet_ckpt(j)))
            _write_loss_csv(
                os.path.join(cfg.output_dir, _frechet_loss_csv(j)), losses)
            roles[_frechet_ckpt(j)] = f"checkpoint:frechet@x={cfg.x_grid[j]}"
            roles[_frechet_loss_csv(j)] = \
                f"loss-trace:frechet@x={cfg.x_grid[j]}"
            print(f"trained frechet for x={cfg.x_grid[j]} "
                  f"({params.param_count} parameters): "
                  f"loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    elif model == "deeponet":
        if x_selection != "all":
            raise ConfigError(
                "the deeponet model trains on all grid points at once; "
                "drop --x or pass --x all")
        settings = cfg.train_deeponet
        tc = settings.to_train_config(cfg.seed_shuffle)

        def source(epoch):
            return stream_batches(train_path, tc.batch_size,
                                  cfg.seed_shuffle, epoch)

        grid = SensorGrid.uniform(cfg.sensor_lo, cfg.sensor_hi,
                                  cfg.n_sensors)
        start = time.perf_counter()
        params, losses = train_don(source, tc, [cfg.seed_init, 1],
                                   x_grid=cfg.x_grid,
                                   basis=build_basis(cfg.n_basis),
                                   grid=grid, width=cfg.deeponet_width)
        timings["train_deeponet_seconds"] = time.perf_counter() - start
        save_checkpoint_don(params,
                            os.path.join(cfg.output_dir, DEEPONET_CKPT),
                            grid)
        _write_loss_csv(os.path.join(cfg.output_dir, "loss_deeponet.csv"),
                        losses)
        roles[DEEPONET_CKPT] = "checkpoint:deeponet"
        roles["loss_deeponet.csv"] = "loss-trace:deeponet"
        print(f"trained deeponet ({params.param_count} parameters): "
              f"loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    else:
        raise ConfigError(f"unknown model {model!r}")
    update_manifest(cfg, roles)
    _merge_timings(cfg.output_dir, timings)
    return 0


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def summarize_errors(errors: np.ndarray) -> dict:
    """MSE, five-number summary and a 30-bin histogram of error samples."""
    errors = np.asarray(errors, dtype=np.float64)
    mse = float(np.mean(errors * errors))
    quantiles = np.quantile(errors, QUANTILE_LEVELS)
    counts, edges = np.histogram(errors, bins=HISTOGRAM_BINS)
    assert int(counts.sum()) == errors.size
    assert np.all(np.diff(quantiles) >= 0)
    return {
        "mse": mse,
        "mse_rounded": round(mse, 3),
        "quantiles": {name: float(q)
                      for name, q in zip(QUANTILE_NAMES, quantiles)},
        "histogram": {"bin_edges": [float(e) for e in edges],
                      "counts": [int(c) for c in counts]},
    }


@dataclass
class EvalReport:
    """Per-x comparison of both models against the Monte Carlo truths."""

    x_grid: Tuple[float, ...]
    n_test: int
    per_x: list
    metadata: dict

    def to_dict(self) -> dict:
        return {"x_grid": list(self.x_grid), "n_test": self.n_test,
                "per_x": self.per_x, "metadata": self.metadata}


def build_report(cfg: ExperimentConfig, truths,
                 predictions: Dict[str, np.ndarray],
                 param_counts: Dict[str, int]) -> EvalReport:
    """Summarize per-x errors of each model's predictions vs the truths.

    ``truths`` and every prediction array are (records, n_x).
    """
    truths = np.asarray(truths, dtype=np.float64)
    if truths.shape[1] != cfg.n_x:
        raise ContractError("truths must have one column per grid point")
    per_x = []
    for j, x in enumerate(cfg.x_grid):
        entry = {"x": x}
        for model, preds in sorted(predictions.items()):
            preds = np.asarray(preds, dtype=np.float64)
            if preds.shape != truths.shape:
                raise ContractError(
                    f"{model} predictions have shape {preds.shape}, "
                    f"truths {truths.shape}")
            stats = summarize_errors(preds[:, j] - truths[:, j])
            entry[f"mse_{model}"] = stats["mse"]
            entry[f"mse_{model}_rounded"] = stats["mse_rounded"]
            entry[f"quantiles_{model}"] = stats["quantiles"]
            entry[f"histogram_{model}"] = stats["histogram"]
        per_x.append(entry)
    metadata = {
        "config_hash": config_hash(cfg),
        "seeds": {"dataset": cfg.seed_dataset, "init": cfg.seed_init,
                  "shuffle": cfg.seed_shuffle},
        "parameter_counts": dict(sorted(param_counts.items())),
        "m_train": cfg.m_train,
        "oracle_paths": cfg.oracle_paths,
        "shared_dataset": True,
        "runtimes": f"{TIMINGS_FILE} sidecar (kept out of this file so "
                    "reruns are byte-identical)",
    }
    return EvalReport(x_grid=cfg.x_grid, n_test=truths.shape[0],
                      per_x=per_x, metadata=metadata)


def _model_names(report: EvalReport):
    return sorted(key[len("mse_"):] for key in report.per_x[0]
                  if key.startswith("mse_") and not key.endswith("_rounded"))


def write_report_files(cfg: ExperimentConfig, report: EvalReport,
                       errors: Dict[str, np.ndarray]) -> Dict[str, str]:
    """Write report.json plus the CSV tables; returns manifest roles."""
    out = cfg.output_dir
    models = _model_names(report)
    _write_json(os.path.join(out, REPORT_FILE), report.to_dict())
    with open(os.path.join(out, "mse_table.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x"] + [f"mse_{m}" for m in models]
                        + [f"mse_{m}_rounded" for m in models])
        for entry in report.per_x:
            writer.writerow([repr(entry["x"])]
                            + [repr(entry[f"mse_{m}"]) for m in models]
                            + [repr(entry[f"mse_{m}_rounded"])
                               for m in models])
    with open(os.path.join(out, "quantiles.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "x"] + list(QUANTILE_NAMES))
        for entry in report.per_x:
            for m in models:
                qs = entry[f"quantiles_{m}"]
                writer.writerow([m, repr(entry["x"])]
                                + [repr(qs[n]) for n in QUANTILE_NAMES])
    with open(os.path.join(out, "histograms.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "x", "bin_index", "bin_lo", "bin_hi",
                         "count"])
        for entry in report.per_x:
            for m in models:
                hist = entry[f"histogram_{m}"]
                edges, counts = hist["bin_edges"], hist["counts"]
                for k, count in enumerate(counts):
                    writer.writerow([m, repr(entry["x"]), k, repr(edges[k]),
                                     repr(edges[k + 1]), count])
    with open(os.path.join(out, "errors.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "x", "record", "error"])
        for j, x in enumerate(report.x_grid):
            for m in models:
                for i, err in enumerate(errors[m][:, j]):
                    writer.writerow([m, repr(float(x)), i, repr(float(err))])
    return {REPORT_FILE: "evaluation-report",
            "mse_table.csv": "mse-table",
            "quantiles.csv": "error-quantiles",
            "histograms.csv": "error-histograms",
            "errors.csv": "error-samples"}


def _print_mse_table(report: EvalReport):
    models = _model_names(report)
    header = "x".ljust(8) + "".join(
        f"{m} mse (rounded / full)".ljust(36) for m in models)
    print(header)
    for entry in report.per_x:
        row = f"{entry['x']:<8g}"
        for m in models:
            row += f"{entry[f'mse_{m}_rounded']:<8.3f}" \
                   f"{entry[f'mse_{m}']:<28.12g}"
        print(row)


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    test_path = require_artifact(cfg, TEST_FILE)
    header, coeffs, truths, _ = load_dataset(test_path)
    _check_dataset_header(cfg, header, is_test=True)
    frechets = []
    for j in range(cfg.n_x):
        try:
            path = require_artifact(cfg, _frechet_ckpt(j))
        except ConfigError:
            raise ConfigError(
                f"missing frechet checkpoint for x={cfg.x_grid[j]}; "
                f"run train --model frechet --x {cfg.x_grid[j]}") from None
        frechets.append(load_checkpoint(path, expected_n_basis=cfg.n_basis))
    don_params, grid = load_checkpoint_don(
        require_artifact(cfg, DEEPONET_CKPT),
        expected_n_sensors=cfg.n_sensors)
    basis = build_basis(cfg.n_basis)
    sensors = sensor_matrix(basis, coeffs, grid)
    n = truths.shape[0]
    predictions = {
        "frechet": np.stack([forward_batch(p, coeffs) for p in frechets],
                            axis=1),
        "deeponet": np.stack(
            [forward_don_batch(don_params, sensors, np.full(n, x))
             for x in cfg.x_grid], axis=1),
    }
    param_counts = {"frechet_per_x": frechets[0].param_count,
                    "deeponet": don_params.param_count}
    report = build_report(cfg, truths, predictions, param_counts)
    errors = {m: predictions[m] - truths for m in predictions}
    roles = write_report_files(cfg, report, errors)
    update_manifest(cfg, roles)
    _merge_timings(cfg.output_dir,
                   {"evaluate_seconds": time.perf_counter() - start})
    _print_mse_table(report)
    return 0


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------

def closed_form_solution(x: float, t: float, T: float, kappa: float) -> float:
    """Solution at (x, t) for the squared datum under a constant potential."""
    return (x * x + (T - t)) * math.exp(kappa * (T - t))


def cmd_oracle(cfg: ExperimentConfig, case: str,
               kappa: Optional[float] = None) -> int:
    if case == "zero-c":
        if kappa not in (None, 0.0):
            raise ConfigError("zero-c fixes kappa at 0")
        kappa = 0.0
    elif case == "const-c":
        kappa = 0.3 if kappa is None else kappa
    elif case == "custom":
        if kappa is None:
            raise ConfigError("custom case needs --kappa")
    else:
        raise ConfigError(f"unknown case {case!r}")
    if not math.isfinite(kappa):
        raise ConfigError("kappa must be finite")
    spec = ProblemSpec(
        phi=_square,
        c=lambda y, k=kappa: np.full_like(np.asarray(y, dtype=np.float64),
                                          k),
        T=cfg.T)
    rows, all_pass = [], True
    for j, x in enumerate(cfg.x_grid):
        rng = np.random.default_rng([cfg.seed_dataset, _ORACLE_CMD_TAG, j])
        estimate, std_error = mc_solution(float(x), cfg.t, spec,
                                          cfg.oracle_paths, cfg.n_steps, rng)
        closed = closed_form_solution(float(x), cfg.t, cfg.T, kappa)
        ok = abs(estimate - closed) <= 3.0 * std_error
        all_pass = all_pass and ok
        rows.append({"x": float(x), "estimate": estimate,
                     "std_error": std_error, "closed_form": closed,
                     "pass": ok})
        print(f"x={x:g}: estimate {estimate:.6f} +- {std_error:.6f}, "
              f"closed form {closed:.6f} -> {'PASS' if ok else 'FAIL'}")
    _ensure_outdir(cfg)
    name = f"oracle_{case}.json"
    _write_json(os.path.join(cfg.output_dir, name),
                {"case": case, "kappa": kappa, "paths": cfg.oracle_paths,
                 "n_steps": cfg.n_steps, "checks": rows})
    update_manifest(cfg, {name: f"oracle-report:{case}"})
    if not all_pass:
        print("oracle check FAILED: at least one estimate is outside "
              "3 standard errors")
        return 2
    return 0


# --------------------------------------------------------------------------
# basis dump
# --------------------------------------------------------------------------

def cmd_basis(cfg: ExperimentConfig, lo: float, hi: float, n: int,
              samples: int = 0, sample_seed: int = 0) -> int:
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError("--dump-grid needs lo < hi")
    if n < 2:
        raise ConfigError("--dump-grid needs at least 2 points")
    if samples < 0:
        raise ConfigError("--samples must be >= 0")
    xs = np.linspace(lo, hi, n)
    basis = build_basis(cfg.n_basis)
    columns = evaluate_many(basis, np.eye(cfg.n_basis), xs)
    names = ["x"] + [f"e_{i + 1}" for i in range(cfg.n_basis)]
    blocks = [xs[None, :], columns]
    if samples:
        rng = np.random.default_rng(sample_seed)
        compact = CompactSetSpec(n_basis=cfg.n_basis, bound=cfg.bound)
        draws = np.stack([sample_compact(compact, rng).coeffs
                          for _ in range(samples)])
        blocks.append(evaluate_many(basis, draws, xs))
        names += [f"c_{i + 1}" for i in range(samples)]
    table = np.concatenate(blocks, axis=0)
    if not np.isfinite(table).all():
        raise NumericError("basis dump produced non-finite values")
    _ensure_outdir(cfg)
    path = os.path.join(cfg.output_dir, "basis_grid.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in table.T:
            writer.writerow([repr(float(v)) for v in row])
    update_manifest(cfg, {"basis_grid.csv": "basis-grid"})
    print(f"wrote basis_grid.csv: {len(names)} columns x {n} rows")
    return 0


# --------------------------------------------------------------------------
# CLI plumbing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oplearn",
        description="Learn the potential-to-solution map of a backward "
                    "parabolic problem and compare against a branch/trunk "
                    "baseline.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate dataset files")
    gen.add_argument("--config", required=True)
    gen.add_argument("--train", action="store_true",
                     help="write the training file")
    gen.add_argument("--test", action="store_true",
                     help="write the test file with Monte Carlo truths")

    tr = sub.add_parser("train", help="train one model")
    tr.add_argument("--config", required=True)
    tr.add_argument("--model", required=True,
                    choices=["frechet", "deeponet"])
    tr.add_argument("--x", default="all",
                    help="grid value to train a frechet net for, or 'all'")

    ev = sub.add_parser("evaluate", help="compare models on the test file")
    ev.add_argument("--config", required=True)

    orc = sub.add_parser("oracle",
                         help="check the Monte Carlo solver against closed "
                              "forms")
    orc.add_argument("--config", required=True)
    orc.add_argument("--case", required=True,
                     choices=["zero-c", "const-c", "custom"])
    orc.add_argument("--kappa", type=float, default=None,
                     help="constant potential level")

    bas = sub.add_parser("basis",
                         help="dump basis curves (and optional draws) as CSV")
    bas.add_argument("--config", required=True)
    bas.add_argument("--dump-grid", nargs=3, required=True,
                     metavar=("LO", "HI", "N"))
    bas.add_argument("--samples", type=int, default=0)
    bas.add_argument("--sample-seed", type=int, default=0)
    return parser


def run_command(args) -> int:
    cfg = load_config(args.config)
    if args.command == "gen-data":
        return cmd_gen_data(cfg, args.train, args.test)
    if args.command == "train":
        return cmd_train(cfg, args.model, args.x)
    if args.command == "evaluate":
        return cmd_evaluate(cfg)
    if args.command == "oracle":
        return cmd_oracle(cfg, args.case, args.kappa)
    if args.command == "basis":
        lo_text, hi_text, n_text = args.dump_grid
        try:
            lo, hi, n = float(lo_text), float(hi_text), int(n_text)
        except ValueError:
            raise ConfigError(
                f"--dump-grid needs two floats and an int, got "
                f"{args.dump_grid}") from None
        return cmd_basis(cfg, lo, hi, n, args.samples, args.sample_seed)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except (ConfigError, ContractError, ConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
