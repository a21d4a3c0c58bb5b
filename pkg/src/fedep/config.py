"""Experiment configuration: JSON schema, defaults, fail-closed validation.

The reference serialization is JSON. Unknown keys are rejected (a misspelled
option must never silently fall back to a default) and every validation
error carries the offending field path.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .datahub import GroupSpec
from .distfit import FitConfig
from .errors import ConfigError
from .learner import TrainConfig

AGGREGATORS = ("fedavg", "fedprox", "fedep")
TOPOLOGY_KINDS = ("fully_connected", "ring", "custom")
FEDPROX_DEFAULT_MU = 0.01


@dataclass
class DatasetConfig:
    """Either a synthetic blob generator or a pair of IDX files."""

    kind: str = "synthetic"
    # synthetic
    n_classes: int = 10
    n_per_class: int = 600
    n_features: int = 784
    cluster_spread: float = 0.25
    # idx
    images: str | None = None
    labels: str | None = None
    subset_size: int | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    groups: list[GroupSpec] = field(default_factory=lambda: [GroupSpec(1.0, 1.0)])
    topology: str = "fully_connected"
    custom_adjacency: list | None = None
    n_nodes: int = 10
    rounds: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    aggregator: str = "fedavg"
    seed: int = 0
    test_fraction: float = 0.2
    global_test_set: bool = False
    inverse_pooling: bool = False
    workers: int = 1
    record_timings: bool = False
    output_dir: str | None = None


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", field=path or "<root>")


def _typed(obj: dict, key: str, types, default, path: str):
    if key not in obj:
        return default
    value = obj[key]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError("expected a number, got a boolean", field=f"{path}{key}")
    if not isinstance(value, types):
        raise ConfigError(f"expected {types}, got {type(value).__name__}", field=f"{path}{key}")
    return value


def _parse_dataset(obj, path="dataset.") -> DatasetConfig:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", field="dataset")
    kind = obj.get("kind", "synthetic")
    if kind == "synthetic":
        _reject_unknown(
            obj, {"kind", "n_classes", "n_per_class", "n_features", "cluster_spread"}, "dataset"
        )
        cfg = DatasetConfig(
            kind="synthetic",
            n_classes=_typed(obj, "n_classes", int, 10, path),
            n_per_class=_typed(obj, "n_per_class", int, 600, path),
            n_features=_typed(obj, "n_features", int, 784, path),
            cluster_spread=float(_typed(obj, "cluster_spread", (int, float), 0.25, path)),
        )
        if cfg.n_classes < 2 or cfg.n_per_class < 1 or cfg.n_features < 1:
            raise ConfigError("counts must be positive (n_classes >= 2)", field="dataset")
        if cfg.cluster_spread < 0:
            raise ConfigError("must be non-negative", field="dataset.cluster_spread")
        return cfg
    if kind == "idx":
        _reject_unknown(obj, {"kind", "images", "labels", "subset_size"}, "dataset")
        images = _typed(obj, "images", str, None, path)
        labels = _typed(obj, "labels", str, None, path)
        if not images or not labels:
            raise ConfigError("idx datasets need 'images' and 'labels' paths", field="dataset")
        for key, p in (("images", images), ("labels", labels)):
            if not os.path.isfile(p):
                raise ConfigError(f"file not found: {p}", field=f"dataset.{key}")
        subset = _typed(obj, "subset_size", int, None, path)
        if subset is not None and subset < 1:
            raise ConfigError("must be positive", field="dataset.subset_size")
        return DatasetConfig(kind="idx", images=images, labels=labels, subset_size=subset)
    raise ConfigError(f"unknown dataset kind {kind!r}", field="dataset.kind")


def _parse_partition(obj) -> list[GroupSpec]:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", field="partition")
    if "alpha" in obj:
        _reject_unknown(obj, {"alpha"}, "partition")
        alpha = _typed(obj, "alpha", (int, float), None, "partition.")
        try:
            return [GroupSpec(1.0, float(alpha))]
        except ValueError as err:
            raise ConfigError(str(err), field="partition.alpha") from err
    if "groups" in obj:
        _reject_unknown(obj, {"groups"}, "partition")
        raw = obj["groups"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("expected a non-empty list", field="partition.groups")
        groups = []
        for i, g in enumerate(raw):
            gpath = f"partition.groups[{i}]"
            if not isinstance(g, dict):
                raise ConfigError("expected an object", field=gpath)
            _reject_unknown(g, {"fraction", "alpha"}, gpath)
            try:
                groups.append(
                    GroupSpec(float(g.get("fraction", 0.0)), float(g.get("alpha", 0.0)))
                )
            except ValueError as err:
                raise ConfigError(str(err), field=gpath) from err
        total = sum(g.fraction for g in groups)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"group fractions must sum to 1, got {total}", field="partition.groups")
        return groups
    raise ConfigError("needs either 'alpha' or 'groups'", field="partition")


def _parse_topology(obj) -> tuple[str, list | None]:
    if isinstance(obj, str):
        if obj not in ("fully_connected", "ring"):
            raise ConfigError(
                f"expected one of {TOPOLOGY_KINDS}, got {obj!r}", field="topology"
            )
        return obj, None
    if isinstance(obj, dict):
        _reject_unknown(obj, {"kind", "adjacency"}, "topology")
        if obj.get("kind") != "custom" or "adjacency" not in obj:
            raise ConfigError("object form must be {'kind': 'custom', 'adjacency': ...}",
                              field="topology")
        return "custom", obj["adjacency"]
    raise ConfigError("expected a string or an object", field="topology")


_TOP_LEVEL_KEYS = {
    "dataset", "partition", "topology", "n_nodes", "rounds", "train", "fit",
    "aggregator", "seed", "test_fraction", "global_test_set", "inverse_pooling",
    "bic_standard", "workers", "record_timings", "output_dir",
}


def config_from_obj(obj: dict) -> ExperimentConfig:
    """Validate a decoded JSON object into an ExperimentConfig."""
    if not isinstance(obj, dict):
        raise ConfigError("top-level config must be an object")
    _reject_unknown(obj, _TOP_LEVEL_KEYS, "")

    aggregator = _typed(obj, "aggregator", str, "fedavg", "")
    if aggregator not in AGGREGATORS:
        raise ConfigError(f"expected one of {AGGREGATORS}, got {aggregator!r}",
                          field="aggregator")

    train_obj = obj.get("train", {})
    if not isinstance(train_obj, dict):
        raise ConfigError("expected an object", field="train")
    _reject_unknown(train_obj, {"epochs", "batch_size", "learning_rate", "proximal_mu"}, "train")
    mu_default = FEDPROX_DEFAULT_MU if aggregator == "fedprox" else 0.0
    try:
        train = TrainConfig(
            epochs=_typed(train_obj, "epochs", int, 3, "train."),
            batch_size=_typed(train_obj, "batch_size", int, 64, "train."),
            learning_rate=float(_typed(train_obj, "learning_rate", (int, float), 0.01, "train.")),
            proximal_mu=float(_typed(train_obj, "proximal_mu", (int, float), mu_default, "train.")),
        )
    except ValueError as err:
        raise ConfigError(str(err), field="train") from err

    fit_obj = obj.get("fit", {})
    if not isinstance(fit_obj, dict):
        raise ConfigError("expected an object", field="fit")
    _reject_unknown(
        fit_obj, {"rho", "max_iterations", "tolerance", "variance_floor", "n_restarts"}, "fit"
    )
    try:
        fit = FitConfig(
            rho=float(_typed(fit_obj, "rho", (int, float), 0.5, "fit.")),
            max_iterations=_typed(fit_obj, "max_iterations", int, 200, "fit."),
            tolerance=float(_typed(fit_obj, "tolerance", (int, float), 1e-6, "fit.")),
            variance_floor=float(_typed(fit_obj, "variance_floor", (int, float), 1e-4, "fit.")),
            n_restarts=_typed(fit_obj, "n_restarts", int, 1, "fit."),
            bic_standard=_typed(obj, "bic_standard", bool, False, ""),
        )
    except ValueError as err:
        raise ConfigError(str(err), field="fit") from err

    topology, adjacency = _parse_topology(obj.get("topology", "fully_connected"))

    cfg = ExperimentConfig(
        dataset=_parse_dataset(obj.get("dataset", {"kind": "synthetic"})),
        groups=_parse_partition(obj.get("partition", {"alpha": 1.0})),
        topology=topology,
        custom_adjacency=adjacency,
        n_nodes=_typed(obj, "n_nodes", int, 10, ""),
        rounds=_typed(obj, "rounds", int, 10, ""),
        train=train,
        fit=fit,
        aggregator=aggregator,
        seed=_typed(obj, "seed", int, 0, ""),
        test_fraction=float(_typed(obj, "test_fraction", (int, float), 0.2, "")),
        global_test_set=_typed(obj, "global_test_set", bool, False, ""),
        inverse_pooling=_typed(obj, "inverse_pooling", bool, False, ""),
        workers=_typed(obj, "workers", int, 1, ""),
        record_timings=_typed(obj, "record_timings", bool, False, ""),
        output_dir=_typed(obj, "output_dir", str, None, ""),
    )
    if cfg.n_nodes < 2:
        raise ConfigError("need at least 2 nodes", field="n_nodes")
    if cfg.rounds < 0:
        raise ConfigError("must be non-negative", field="rounds")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError("must lie in (0, 1)", field="test_fraction")
    if cfg.workers < 1:
        raise ConfigError("must be positive", field="workers")
    return cfg


def config_to_obj(cfg: ExperimentConfig) -> dict:
    """Serialize back to the JSON schema; inverse of config_from_obj."""
    if cfg.dataset.kind == "synthetic":
        dataset = {
            "kind": "synthetic",
            "n_classes": cfg.dataset.n_classes,
            "n_per_class": cfg.dataset.n_per_class,
            "n_features": cfg.dataset.n_features,
            "cluster_spread": cfg.dataset.cluster_spread,
        }
    else:
        dataset = {"kind": "idx", "images": cfg.dataset.images, "labels": cfg.dataset.labels}
        if cfg.dataset.subset_size is not None:
            dataset["subset_size"] = cfg.dataset.subset_size
    obj = {
        "dataset": dataset,
        "partition": {"groups": [{"fraction": g.fraction, "alpha": g.alpha} for g in cfg.groups]},
        "topology": (
            cfg.topology
            if cfg.topology != "custom"
            else {"kind": "custom", "adjacency": cfg.custom_adjacency}
        ),
        "n_nodes": cfg.n_nodes,
        "rounds": cfg.rounds,
        "train": {
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "proximal_mu": cfg.train.proximal_mu,
        },
        "fit": {
            "rho": cfg.fit.rho,
            "max_iterations": cfg.fit.max_iterations,
            "tolerance": cfg.fit.tolerance,
            "variance_floor": cfg.fit.variance_floor,
            "n_restarts": cfg.fit.n_restarts,
        },
        "aggregator": cfg.aggregator,
        "seed": cfg.seed,
        "test_fraction": cfg.test_fraction,
        "global_test_set": cfg.global_test_set,
        "inverse_pooling": cfg.inverse_pooling,
        "bic_standard": cfg.fit.bic_standard,
        "workers": cfg.workers,
        "record_timings": cfg.record_timings,
    }
    if cfg.output_dir is not None:
        obj["output_dir"] = cfg.output_dir
    return obj


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return config_from_obj(obj)
