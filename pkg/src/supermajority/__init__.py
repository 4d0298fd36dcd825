"""Supermajority locality sensitive filters for gapped set similarity search.

The package plans filter trees from KL-divergence exponents, builds a
tensored index over fixed-weight sets, answers queries, and ships exact
oracles for the random-walk lemmas behind the analysis.
"""

from ._backend import DEFAULT as BACKEND
from ._backend import available_backends, get_backend
from .divergence import (
    INF,
    GapParams,
    InfeasibleError,
    JointDistribution,
    Thresholds,
    joint_from_marginals,
    kl_binary,
    kl_joint,
    optimize_inner,
)
from .exponents import (
    ConfigurationError,
    ExponentPair,
    TradeoffPoint,
    balanced_closed_form,
    balanced_point,
    baseline_rhos,
    best_linear_combination,
    endpoint_thresholds,
    lower_bound_random,
    lower_bound_symmetric,
    minhash_dominating,
    rho_pair,
    tradeoff_curve,
    tree_depth,
)
from .instance import Instance, generate, read_instance, write_instance
from .lsf_index import (
    DecodedPath,
    FilterIndex,
    QueryReport,
    TreeConfig,
    build,
    decode,
    load_index,
    plan,
    query,
    query_batch,
    save_index,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "INF",
    "GapParams",
    "InfeasibleError",
    "JointDistribution",
    "Thresholds",
    "joint_from_marginals",
    "kl_binary",
    "kl_joint",
    "optimize_inner",
    "ConfigurationError",
    "ExponentPair",
    "TradeoffPoint",
    "balanced_closed_form",
    "balanced_point",
    "baseline_rhos",
    "best_linear_combination",
    "endpoint_thresholds",
    "lower_bound_random",
    "lower_bound_symmetric",
    "minhash_dominating",
    "rho_pair",
    "tradeoff_curve",
    "tree_depth",
    "Instance",
    "generate",
    "read_instance",
    "write_instance",
    "DecodedPath",
    "FilterIndex",
    "QueryReport",
    "TreeConfig",
    "build",
    "decode",
    "load_index",
    "plan",
    "query",
    "query_batch",
    "save_index",
]
