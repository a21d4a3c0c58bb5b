"""Decentralized federated learning simulator with entropy-pooling aggregation."""

from .config import ExperimentConfig, config_from_obj, config_to_obj, parse_config
from .datahub import (
    Dataset,
    GroupSpec,
    Partition,
    PartitionSpec,
    dirichlet_partition,
    dirichlet_variance,
    load_idx_dataset,
    make_synthetic,
    split_local_test,
)
from .distfit import (
    FitConfig,
    FittedDistribution,
    GmmParams,
    bic,
    discretize,
    expectation_max,
    pretrain_distribution_fitting,
)
from .federation import (
    ExperimentResult,
    RoundRecord,
    Topology,
    aggregate_fedavg,
    aggregate_fedep,
    build_topology,
    run_experiment,
    write_metrics_csv,
)
from .learner import EvalReport, ModelWeights, TrainConfig, evaluate, forward, train_local
from .numkit import Rng, log_sum_exp, sample_gamma, softmax
from .pooling import (
    GlobalDistribution,
    PoolingWeights,
    entropy_pooling_weights,
    estimate_global,
    global_discrete,
    kl_divergence,
)

__version__ = "0.1.0"
