"""Experiment configuration, split generation and the per-seed run loop."""
import copy
import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import protocol, synthetic, trainer
from .data import DomainTag, LabeledDataset, load_feature_csv, validate
from .errors import ConfigError, DataError

METHODS = ("dage-lda", "ccsa", "dsne", "nem")

#: per-method step sizes; the contrastive losses are sums over pairs and need smaller steps
DEFAULT_LEARNING_RATES = {"dage-lda": 0.01, "ccsa": 3e-4, "dsne": 3e-4, "nem": 3e-4}

_TRAIN_KEYS = {
    "d", "learning_rate", "momentum", "epochs", "batch_pairs", "beta", "gamma",
    "epsilon", "nu", "k", "sigma", "l2", "ratio_da_ce", "ratio_st",
}
_PROTOCOL_KEYS = {"test_fraction", "n_source_per_class", "n_target_per_class", "ratio", "test_seed", "run_seeds", "preset"}
_DATA_KEYS = {"csv", "synthetic"}
_TOP_KEYS = {"method", "data", "protocol", "train", "baseline", "out"}


def default_config():
    return {
        "method": "dage-lda",
        "data": {"synthetic": synthetic.BENCHMARK_SPEC.to_dict()},
        "protocol": {
            "test_fraction": 0.3,
            "n_source_per_class": 20,
            "n_target_per_class": 3,
            "ratio": [1, 3],
            "test_seed": 0,
            "run_seeds": [0, 1, 2, 3, 4],
        },
        "train": {
            "d": 2,
            "momentum": 0.9,
            "epochs": 30,
            "batch_pairs": 32,
            "beta": 1.0,
            "gamma": 1.0,
            "epsilon": 2.0,
            "nu": 1.0,
            "k": 3,
            "sigma": None,
            "l2": 0.0,
        },
        "baseline": True,
        "out": "out",
    }


def _merge(base, override, path=""):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict) and key != "synthetic":
            _merge(base[key], value, f"{path}{key}.")
        else:
            base[key] = value
    return base


def parse_override(text):
    """``a.b=value`` -> (["a", "b"], value); values parse as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(cfg, keys, value):
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    data: dict
    protocol: protocol.ProtocolParams
    run_seeds: tuple
    train: dict
    baseline: bool
    out: str

    @classmethod
    def from_dict(cls, raw):
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(default_config(), copy.deepcopy(raw))
        if "csv" in raw.get("data", {}):
            cfg["data"].pop("synthetic", None)
        for section, allowed in (("data", _DATA_KEYS), ("protocol", _PROTOCOL_KEYS), ("train", _TRAIN_KEYS)):
            if not isinstance(cfg[section], dict):
                raise ConfigError(f"{section} must be an object")
            bad = set(cfg[section]) - allowed
            if bad:
                raise ConfigError(f"unknown {section} keys: {sorted(bad)}")
        method = cfg["method"]
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
        if len(cfg["data"]) != 1:
            raise ConfigError("data must name exactly one of 'csv' or 'synthetic'")
        if "synthetic" in cfg["data"]:
            try:
                synthetic.ShiftSpec.from_dict(cfg["data"]["synthetic"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad synthetic spec: {exc}") from None
        p = dict(cfg["protocol"])
        seeds = p.pop("run_seeds")
        preset = p.pop("preset", None)
        if preset is not None:
            if preset not in protocol.PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; known: {sorted(protocol.PRESETS)}")
            base = protocol.PRESETS[preset].to_dict()
            base.update({k: v for k, v in raw.get("protocol", {}).items() if k in base})
            p = base
        try:
            params = protocol.ProtocolParams(
                float(p["test_fraction"]), int(p["n_source_per_class"]), int(p["n_target_per_class"]),
                tuple(int(r) for r in p["ratio"]), int(p["test_seed"]),
            )
            seeds = tuple(int(s) for s in seeds)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad protocol parameters: {exc}") from None
        if not seeds:
            raise ConfigError("run_seeds must not be empty")
        if len(params.ratio) != 2:
            raise ConfigError("ratio must be a pair [same, diff]")
        cfg_obj = cls(method, cfg["data"], params, seeds, cfg["train"], bool(cfg["baseline"]), str(cfg["out"]))
        cfg_obj.train_config(seeds[0])  # validate eagerly
        return cfg_obj

    def train_config(self, seed):
        t = dict(self.train)
        ratio_da_ce = t.pop("ratio_da_ce", None)
        ratio_st = t.pop("ratio_st", None)
        if (ratio_da_ce is None) != (ratio_st is None):
            raise ConfigError("ratio_da_ce and ratio_st must be given together")
        if ratio_da_ce is not None:
            t["beta"], t["gamma"] = trainer.weights_from_ratios(float(ratio_da_ce), float(ratio_st))
        t.setdefault("learning_rate", DEFAULT_LEARNING_RATES[self.method])
        try:
            return trainer.TrainConfig(loss_kind=self.method, seed=int(seed), **t)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()):
    raw = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    for text in overrides:
        keys, value = parse_override(text)
        apply_override(raw, keys, value)
    return ExperimentConfig.from_dict(raw)


def load_data(cfg):
    """Return ``(source, target, fingerprint)`` for the configured data."""
    if "synthetic" in cfg.data:
        spec = synthetic.ShiftSpec.from_dict(cfg.data["synthetic"])
        source, target = synthetic.generate(spec)
        fp = protocol.sha256_hex(protocol.fingerprint_dataset(source) + protocol.fingerprint_dataset(target))
        return source, target, fp
    paths = cfg.data["csv"]
    paths = [paths] if isinstance(paths, str) else list(paths)
    parts = [load_feature_csv(p) for p in paths]
    if len({p.dim for p in parts}) != 1:
        raise DataError("CSV files disagree on the feature dimension")
    full = LabeledDataset.concat(*parts)
    bad = validate(full)
    if bad is not None:
        raise DataError(str(bad))
    source, target = full.domain(DomainTag.SOURCE), full.domain(DomainTag.TARGET)
    if source.n == 0 or target.n == 0:
        raise DataError("data must contain both source and target rows")
    return source, target, protocol.fingerprint_files(paths)


def make_manifest(cfg, source, target, fingerprint, kind="rectified"):
    build = protocol.build_manifest if kind == "rectified" else protocol.build_traditional_manifest
    return build(source, target, cfg.protocol, cfg.run_seeds, fingerprint)


def single_run_manifest(m, run):
    return protocol.SplitManifest(m.fingerprint, m.test, (run,), m.params, m.protocol)


def write_atomic(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class QuarantinedTest:
    """Test split wrapper that counts every access to its data."""

    def __init__(self, dataset):
        self._dataset = dataset
        self.accesses = 0

    def open(self):
        self.accesses += 1
        return self._dataset


def remap_pairs(pairs, train_source, train_target):
    smap = {g: i for i, g in enumerate(train_source)}
    tmap = {g: i for i, g in enumerate(train_target)}
    return protocol.PairSet(
        tuple((smap[s], tmap[t], same) for s, t, same in pairs.pairs),
        pairs.ratio_requested, pairs.n_same, pairs.n_diff, pairs.available_diff, pairs.requested_diff,
    )


def run_seed(cfg, source, target, manifest, run):
    """Train on one run record, select by validation accuracy, test once."""
    tcfg = cfg.train_config(run.seed)
    train_s = source.subset(list(run.train_source))
    train_t = target.subset(list(run.train_target))
    val = target.subset(list(run.validation))
    test_idx = run.test if run.test is not None else manifest.test
    test = QuarantinedTest(target.subset(list(test_idx)))
    pairs = remap_pairs(run.pairs, run.train_source, run.train_target)

    val_curve = []
    best = {"acc": -1.0, "epoch": None, "model": None}

    def on_epoch(epoch, model):
        acc = trainer.evaluate(model, val).accuracy
        val_curve.append(acc)
        if acc > best["acc"]:  # strict: earliest epoch wins ties
            best.update(acc=acc, epoch=epoch, model=model.copy())

    final = trainer.train_joint(train_s, train_t, pairs, tcfg, on_epoch=on_epoch)
    report = trainer.evaluate(best["model"], test.open())
    out = {
        "seed": run.seed,
        "val_curve": val_curve,
        "best_epoch": best["epoch"],
        "best_val_accuracy": best["acc"],
        "test_accuracy": report.accuracy,
        "loss_curve": final.loss_curve,
        "test_accesses": test.accesses,
    }
    if cfg.baseline:
        out["baseline_accuracy"] = trainer.ncm_baseline(train_s, test.open()).accuracy
        out["test_accesses"] = test.accesses
    return out


def _run_seed_job(args):
    return run_seed(*args)


def summarize(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def format_mean_std(mean, std):
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def run_experiment(cfg, source, target, manifest, jobs=1):
    jobs_args = [(cfg, source, target, manifest, r) for r in manifest.runs]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_run_seed_job, jobs_args))
    else:
        per_seed = [run_seed(*a) for a in jobs_args]
    mean, std = summarize([r["test_accuracy"] for r in per_seed])
    results = {
        "method": cfg.method,
        "protocol": manifest.protocol,
        "manifest_hash": manifest.manifest_hash,
        "per_seed": {str(r["seed"]): r for r in per_seed},
        "mean": mean,
        "std": std,
    }
    if cfg.baseline:
        results["baseline_mean"], results["baseline_std"] = summarize([r["baseline_accuracy"] for r in per_seed])
    if manifest.protocol == "traditional":
        results["deprecated"] = "traditional protocol: model selection used the test data"
    return results


def results_json(results):
    return protocol.canonical_json(results)


def results_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["method", "seed", "best_epoch", "best_val_accuracy", "test_accuracy"]
    with_base = "baseline_mean" in results
    if with_base:
        header.append("baseline_accuracy")
    writer.writerow(header)
    for key in sorted(results["per_seed"], key=int):
        r = results["per_seed"][key]
        row = [results["method"], r["seed"], r["best_epoch"], repr(r["best_val_accuracy"]), repr(r["test_accuracy"])]
        if with_base:
            row.append(repr(r["baseline_accuracy"]))
        writer.writerow(row)
    return buf.getvalue()
