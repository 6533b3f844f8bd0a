"""Config handling and the end-to-end runs behind the command line."""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, fields
from pathlib import Path

from . import bench
from .checkpoint import checkpoint_load, checkpoint_save
from .data import FeatureStore, SyntheticSpec, generate_synthetic, load_manifest
from .episodes import EpisodeStream, split_classes
from .gradcheck import run_all as run_grad_checks
from .model import ABLATIONS, DTYPES, ITANet, ModelConfig, TrainConfig, evaluate, make_optimizer, train

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class OutputExistsError(FileExistsError):
    pass


_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name not in ("n_t", "H_f", "W_f", "n_c", "num_train_classes")]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("beta", "tau")]

DEFAULT_CONFIG = {
    "data": {
        "manifest": None,
        "precision": "f32",
        "synthetic": asdict(SyntheticSpec()),
        "split": {"mode": "videos", "train_fraction": 0.5, "sizes": [64, 12, 24], "seed": 0},
    },
    "model": {"ablation": None, **{k: v for k, v in asdict(ModelConfig()).items() if k in _MODEL_KEYS}},
    "loss": {"beta": 1.0, "tau": 10.0},
    "train": {k: v for k, v in asdict(TrainConfig()).items() if k in _TRAIN_KEYS},
    "eval": {"runs": 5, "episodes_per_run": 1000, "seed": 1, "metric": None},
    "bench": {"sizes": [8, 16, 32, 64, 128], "repetitions": 5, "stages": list(bench.STAGES)},
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return _merge(DEFAULT_CONFIG, user)


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"override {key!r} does not name an existing config key")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"override {key!r} does not name an existing config key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[parts[-1]] = value


def set_seed(cfg: dict, seed: int) -> None:
    cfg["train"]["seed"] = seed
    cfg["eval"]["seed"] = seed + 1
    cfg["data"]["synthetic"]["seed"] = seed


def set_precision(cfg: dict, precision: str) -> None:
    if precision not in DTYPES:
        raise ConfigError(f"precision must be one of {sorted(DTYPES)}")
    cfg["train"]["precision"] = precision
    cfg["data"]["precision"] = precision


# ---------------------------------------------------------------- datasets

class Dataset:
    """Manifest, feature store, and the train/test pools of one experiment."""

    def __init__(self, manifest, store, train_pool, test_pool, train_classes, test_classes):
        self.manifest = manifest
        self.store = store
        self.train_pool = train_pool
        self.test_pool = test_pool
        self.train_classes = train_classes
        self.test_classes = test_classes


def build_dataset(cfg: dict) -> Dataset:
    dcfg = cfg["data"]
    dtype = DTYPES[cfg["train"]["precision"]]
    if dcfg["manifest"]:
        manifest = load_manifest(dcfg["manifest"])
        store = FeatureStore(manifest, dtype=dtype)
    else:
        spec = SyntheticSpec(**dcfg["synthetic"])
        manifest, features = generate_synthetic(spec, precision=dcfg["precision"])
        store = FeatureStore(manifest, features, dtype=dtype)
    split = dcfg["split"]
    by_class = manifest.videos_by_class()
    if split["mode"] == "videos":
        frac = float(split["train_fraction"])
        train_pool, test_pool = {}, {}
        for cls, vids in by_class.items():
            cut = int(len(vids) * frac)
            train_pool[cls], test_pool[cls] = vids[:cut], vids[cut:]
        classes = manifest.class_ids()
        return Dataset(manifest, store, train_pool, test_pool, classes, classes)
    if split["mode"] == "classes":
        spec = split_classes(manifest.class_ids(), tuple(split["sizes"]), split["seed"])
        return Dataset(manifest, store, by_class, by_class, list(spec.train_classes), list(spec.test_classes))
    raise ConfigError(f"unknown split mode {split['mode']!r}")


def model_config(cfg: dict, dataset: Dataset) -> ModelConfig:
    mcfg = dict(cfg["model"])
    ablation = mcfg.pop("ablation")
    if ablation is not None:
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}")
        mcfg.update(ABLATIONS[ablation])
    n_t, h, w, c = dataset.manifest.dims
    return ModelConfig(n_t=n_t, H_f=h, W_f=w, n_c=c, num_train_classes=len(dataset.train_classes), **mcfg)


def train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(**cfg["train"], beta=cfg["loss"]["beta"], tau=cfg["loss"]["tau"])
    tc.validate()
    return tc


def _claim(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise OutputExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- runs

def run_gen_data(cfg: dict, out_dir, force: bool = False) -> Path:
    out = Path(out_dir) / "data"
    _claim(out / "manifest.json", force)
    spec = SyntheticSpec(**cfg["data"]["synthetic"])
    generate_synthetic(spec, out, precision=cfg["data"]["precision"])
    return out / "manifest.json"


def run_train(cfg: dict, out_dir, force: bool = False) -> tuple[Path, Path]:
    out = Path(out_dir)
    ckpt_path = _claim(out / "checkpoint.itan", force)
    log_path = _claim(out / "losses.csv", force)
    dataset = build_dataset(cfg)
    tc = train_config(cfg)
    model = ITANet(model_config(cfg, dataset), dataset.train_classes, dtype=DTYPES[tc.precision])
    stream = EpisodeStream(dataset.train_pool, dataset.train_classes, tc.way, tc.shot, tc.queries, seed=tc.seed)
    optimizer = make_optimizer(model, tc)
    rows = train(model, stream, dataset.store, tc, optimizer=optimizer)
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "L_meta", "L_sem", "L_all"])
        for ep, meta, sem, total in rows:
            w.writerow([ep, repr(meta), repr(sem), repr(total)])
    checkpoint_save(ckpt_path, model, tc, stream.rng.getstate(), tc.episodes, optimizer)
    return ckpt_path, log_path


def run_eval(cfg: dict, out_dir, checkpoint=None, force: bool = False) -> Path:
    out = Path(out_dir)
    report_path = _claim(out / "eval_report.json", force)
    ckpt = checkpoint_load(checkpoint or out / "checkpoint.itan")
    dataset = build_dataset(cfg)
    model, tc = ckpt.model, ckpt.train_config
    ecfg = cfg["eval"]
    stream = EpisodeStream(dataset.test_pool, dataset.test_classes, tc.way, tc.shot, tc.queries, seed=ecfg["seed"])
    report = evaluate(model, stream, dataset.store, ecfg["runs"], ecfg["episodes_per_run"], ecfg["metric"])
    payload = {**report.to_json(), "way": tc.way, "shot": tc.shot, "queries": tc.queries,
               "metric": ecfg["metric"] or ("frame" if model.config.framewise else "mean")}
    report_path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return report_path


def run_bench(cfg: dict, out_dir, force: bool = False) -> list[bench.ScalingReport]:
    out = Path(out_dir)
    _claim(out / "scaling.csv", force)
    _claim(out / "scaling.json", force)
    bcfg = cfg["bench"]
    reports = [bench.measure_scaling(stage, bcfg["sizes"], repetitions=bcfg["repetitions"])
               for stage in bcfg["stages"]]
    bench.write_reports(reports, out)
    return reports


def run_grad_check(seed: int = 0) -> list[tuple[str, float, bool]]:
    return run_grad_checks(seed)
