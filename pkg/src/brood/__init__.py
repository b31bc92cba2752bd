"""Bayesian DAG structure inference with a transdimensional order sampler."""

from .bge import (
    BgeHyper,
    BgeScorer,
    ConstantScorer,
    DataSet,
    build_hyper,
    chol_rank1_update,
    log_minus_exp,
    log_sum_exp,
)
from .graphs import (
    Dag,
    Edge,
    SearchSpace,
    TopOrder,
    compatible_orders,
    dags_in,
    enumerate_dags,
    is_acyclic,
    order_compatible,
    space_add_edge,
    space_remove_edge,
)
from .metrics import EdgeProbMatrix, MetricsReport, edge_probs, evaluate
from .oracle import (
    ExactPosterior,
    TvReport,
    c_constant,
    exact_mixture_kernel,
    exact_posteriors,
    hellinger,
    tv_distance,
    verify_bounds,
)
from .order_kernel import (
    OrderState,
    propose_order,
    q0_step,
    sample_dag_given,
    warm_start_order,
)
from .sampler import (
    BroodConfig,
    ChainSample,
    ChainTrace,
    RatesSnapshot,
    birth_rate,
    brood_step,
    death_rate,
    q1_step,
    rates_snapshot,
    run_chain,
    stationary_reference,
)
from .synth import GroundTruth, SemSpec, pc_skeleton, sample_graph, sample_sem
from .tables import (
    NodeTables,
    TableSet,
    banned_code,
    build_node_tables,
    build_tables,
    contract_node_tables,
    expand_node_tables,
    plus_order_logscore,
    restricted_order_logscore,
)

__version__ = "0.1.0"
