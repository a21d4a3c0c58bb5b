"""Decentralized round engine: topology, per-node state, exchange, aggregation.

Rounds are synchronous. Every node trains locally, broadcasts its weights
over the compact wire format, and then aggregates the models of itself plus
its neighbors, either by sample-size weighting (fedavg, also used by
fedprox) or by the entropy-pooling attention computed once from the
distributions exchanged before training started. Node tasks are independent
and collected into node-id order, so results do not depend on the worker
count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import DatasetConfig, ExperimentConfig
from .datahub import (
    Dataset,
    Partition,
    PartitionSpec,
    dirichlet_partition,
    load_idx_dataset,
    make_synthetic,
    split_local_test,
)
from .distfit import (
    FitConfig,
    FittedDistribution,
    discretize,
    histogram_distribution,
    pretrain_distribution_fitting,
)
from .errors import ConsistencyError, FittingError, NumericError, TopologyError
from .learner import (
    EvalReport,
    ModelWeights,
    TrainConfig,
    evaluate,
    mlp_dims,
    train_local,
)
from .numkit import Rng
from .pooling import PoolingWeights, entropy_pooling_weights, estimate_global, global_discrete

CSV_HEADER = "round,node_id,f1,loss,alpha,duration_ms"


@dataclass
class Topology:
    """Symmetric neighbor graph without self-loops; every node connected."""

    n_nodes: int
    adjacency: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (self.n_nodes, self.n_nodes):
            raise TopologyError(f"adjacency must be {self.n_nodes}x{self.n_nodes}")
        if np.any(np.diag(adj)):
            raise TopologyError("self-loops are not allowed")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        if not np.all(adj.any(axis=1)):
            raise TopologyError("every node needs at least one neighbor")
        self.adjacency = adj

    def neighbors(self, node_id: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[node_id])]

    def contributors(self, node_id: int) -> list[int]:
        """The node itself plus its neighbors, in node-id order."""
        return sorted({node_id, *self.neighbors(node_id)})


def build_topology(kind: str, n_nodes: int, adjacency=None) -> Topology:
    """fully_connected: all pairs; ring: i <-> i+1 mod n; custom: caller-given."""
    if n_nodes < 2:
        raise TopologyError("need at least 2 nodes")
    if kind == "fully_connected":
        adj = ~np.eye(n_nodes, dtype=bool)
    elif kind == "ring":
        adj = np.zeros((n_nodes, n_nodes), dtype=bool)
        for i in range(n_nodes):
            adj[i, (i + 1) % n_nodes] = True
            adj[(i + 1) % n_nodes, i] = True
    elif kind == "custom":
        if adjacency is None:
            raise TopologyError("custom topology requires an adjacency matrix")
        adj = np.asarray(adjacency, dtype=bool)
    else:
        raise TopologyError(f"unknown topology kind {kind!r}")
    return Topology(n_nodes, adj, kind)


@dataclass
class NodeState:
    """Everything one node owns: model, data slices, rng, shared summaries."""

    node_id: int
    weights: ModelWeights
    train_idx: np.ndarray
    test_idx: np.ndarray
    rng: Rng
    contributors: list[int] = field(default_factory=list)
    fit: FittedDistribution | None = None
    neighbor_fits: dict[int, FittedDistribution] = field(default_factory=dict)
    pooling: PoolingWeights | None = None


@dataclass
class RoundRecord:
    round_index: int
    reports: list[EvalReport]
    alphas: list[np.ndarray] | None
    duration_s: float

    def mean_f1(self) -> float:
        return float(np.mean([r.macro_f1 for r in self.reports]))

    def std_f1(self) -> float:
        return float(np.std([r.macro_f1 for r in self.reports]))

    def mean_loss(self) -> float:
        return float(np.mean([r.loss for r in self.reports]))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    states: list[NodeState]
    partition: Partition
    dataset: Dataset

    def final_mean_f1(self) -> float:
        if not self.records:
            raise ValueError("experiment ran zero rounds")
        return self.records[-1].mean_f1()


def fit_local_distributions(
    states: list[NodeState], labels: np.ndarray, n_classes: int, fit_config: FitConfig, seed: int
) -> None:
    """Fit every node's training labels; EM failures fall back to histograms."""
    for st in states:
        node_labels = labels[st.train_idx]
        rng = Rng.substream(seed, st.node_id, "fit")
        try:
            st.fit = pretrain_distribution_fitting(node_labels, n_classes, fit_config, rng)
        except (FittingError, NumericError):
            st.fit = histogram_distribution(node_labels, n_classes, fit_config.variance_floor)


def phase1_exchange(states: list[NodeState], topology: Topology) -> None:
    """Give every node the fitted summaries of itself and all its neighbors.

    Happens exactly once, before training. Summaries travel as their JSON
    wire payload, so each cache entry is an independent decoded copy.
    """
    for st in states:
        if st.fit is None:
            raise ValueError(f"node {st.node_id} has not fitted its distribution yet")
    wire = {st.node_id: st.fit.to_json() for st in states}
    for st in states:
        st.neighbor_fits = {
            j: FittedDistribution.from_json(wire[j]) for j in topology.contributors(st.node_id)
        }


def compute_pooling_weights(states: list[NodeState], inverse: bool = False) -> None:
    """Per-node attention over its neighborhood; cached for every later round."""
    for st in states:
        fits = [st.neighbor_fits[j] for j in st.contributors]
        p_global = global_discrete(estimate_global(fits))
        p_locals = [discretize(f) for f in fits]
        st.pooling = entropy_pooling_weights(p_global, p_locals, inverse=inverse)


def _weighted_sum(models: list[ModelWeights], alphas: np.ndarray) -> ModelWeights:
    dims = models[0].layer_dims
    for m in models[1:]:
        if m.layer_dims != dims:
            raise ConsistencyError("cannot aggregate models of different shapes")
    stacked = np.stack([m.flat for m in models])
    return ModelWeights(dims, alphas @ stacked)


def aggregate_fedavg(models: list[ModelWeights], sizes) -> ModelWeights:
    """Weighted mean with weights proportional to local sample counts."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if len(sizes) != len(models) or len(models) == 0:
        raise ConsistencyError("need one size per model and at least one model")
    if np.any(sizes <= 0):
        raise ValueError("sample counts must be positive")
    return _weighted_sum(models, sizes / sizes.sum())


def aggregate_fedep(models: list[ModelWeights], alphas) -> ModelWeights:
    """Weighted mean with the entropy-pooling attention coefficients."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if len(alphas) != len(models) or len(models) == 0:
        raise ConsistencyError("need one attention weight per model")
    if abs(alphas.sum() - 1.0) > 1e-9 or np.any(alphas < 0):
        raise ConsistencyError("attention weights must be non-negative and sum to 1")
    return _weighted_sum(models, alphas)


def _map_ordered(fn, items, executor: ThreadPoolExecutor | None):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def run_round(
    states: list[NodeState],
    topology: Topology,
    dataset: Dataset,
    aggregator: str,
    train_config: TrainConfig,
    round_index: int,
    executor: ThreadPoolExecutor | None = None,
) -> RoundRecord:
    """One synchronous round: local training, broadcast, aggregation, evaluation."""
    t0 = time.perf_counter()

    def train_one(st: NodeState) -> ModelWeights:
        return train_local(
            st.weights,
            dataset.features[st.train_idx],
            dataset.labels[st.train_idx],
            train_config,
            st.rng,
            anchor=st.weights,
        )

    trained = _map_ordered(train_one, states, executor)
    wire = {st.node_id: trained[i].to_bytes() for i, st in enumerate(states)}

    new_weights = []
    for st in states:
        models = [ModelWeights.from_bytes(wire[j]) for j in st.contributors]
        if aggregator == "fedep":
            if st.pooling is None:
                raise ValueError(f"node {st.node_id} has no pooling weights; run phase 1 first")
            new_weights.append(aggregate_fedep(models, st.pooling.alpha))
        else:
            sizes = [len(states[j].train_idx) for j in st.contributors]
            new_weights.append(aggregate_fedavg(models, sizes))
    for st, w in zip(states, new_weights):
        st.weights = w

    def eval_one(st: NodeState) -> EvalReport:
        return evaluate(
            st.weights,
            dataset.features[st.test_idx],
            dataset.labels[st.test_idx],
            dataset.n_classes,
        )

    reports = _map_ordered(eval_one, states, executor)
    alphas = [st.pooling.alpha.copy() for st in states] if aggregator == "fedep" else None
    return RoundRecord(round_index, reports, alphas, time.perf_counter() - t0)


def build_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    if cfg.kind == "synthetic":
        return make_synthetic(
            Rng.substream(seed, "dataset"),
            cfg.n_classes,
            cfg.n_per_class,
            cfg.n_features,
            cfg.cluster_spread,
        )
    dataset = load_idx_dataset(cfg.images, cfg.labels)
    if cfg.subset_size is not None and cfg.subset_size < len(dataset):
        dataset = dataset.subset(np.arange(cfg.subset_size))
    return dataset


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Build data, partition, topology and model, then run all rounds.

    Fully deterministic given the config: every random stream is keyed by
    (seed, node_id, purpose), and nodes collect results into id-ordered
    slots before any reduction.
    """
    dataset = build_dataset(cfg.dataset, cfg.seed)
    partition = dirichlet_partition(
        Rng.substream(cfg.seed, "partition"), dataset, PartitionSpec(cfg.n_nodes, cfg.groups)
    )
    train_idx, test_idx = split_local_test(
        partition.assignments, dataset.labels, cfg.test_fraction
    )
    if cfg.global_test_set:
        pooled = np.sort(np.concatenate(test_idx))
        test_idx = [pooled for _ in range(cfg.n_nodes)]

    topology = build_topology(cfg.topology, cfg.n_nodes, cfg.custom_adjacency)
    shared_init = ModelWeights.init_glorot(
        mlp_dims(dataset.n_features, dataset.n_classes), Rng.substream(cfg.seed, "init")
    )
    states = [
        NodeState(
            node_id=i,
            weights=shared_init.copy(),
            train_idx=train_idx[i],
            test_idx=test_idx[i],
            rng=Rng.substream(cfg.seed, i, "train"),
            contributors=topology.contributors(i),
        )
        for i in range(cfg.n_nodes)
    ]

    if cfg.aggregator == "fedep":
        fit_local_distributions(states, dataset.labels, dataset.n_classes, cfg.fit, cfg.seed)
        phase1_exchange(states, topology)
        compute_pooling_weights(states, inverse=cfg.inverse_pooling)

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        records = [
            run_round(states, topology, dataset, cfg.aggregator, cfg.train, r, executor)
            for r in range(cfg.rounds)
        ]
    finally:
        if executor is not None:
            executor.shutdown()
    return ExperimentResult(cfg, records, states, partition, dataset)


def metrics_csv_lines(records: list[RoundRecord], record_timings: bool = False) -> list[str]:
    """Flatten round records into the stable CSV schema.

    The alpha column is empty for non-fedep runs and the duration column is
    written only when timings were requested, keeping default output
    byte-identical across reruns of the same (config, seed).
    """
    lines = [CSV_HEADER]
    for rec in records:
        for node_id, report in enumerate(rec.reports):
            alpha = (
                ";".join(f"{a:.10g}" for a in rec.alphas[node_id])
                if rec.alphas is not None
                else ""
            )
            duration = str(int(rec.duration_s * 1000.0)) if record_timings else ""
            lines.append(
                f"{rec.round_index},{node_id},{report.macro_f1:.10g},"
                f"{report.loss:.10g},{alpha},{duration}"
            )
    return lines


def write_metrics_csv(records: list[RoundRecord], path, record_timings: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(metrics_csv_lines(records, record_timings)) + "\n")
