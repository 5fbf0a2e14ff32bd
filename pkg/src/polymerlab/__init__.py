"""polymerlab: desk-scale numerics for directed polymers in random environment."""

from .env import DisorderSpec, EnvironmentField, l2_region_check, lambda2, log_mgf
from .walk import KernelTable, llt_error_scan, parity, q_bar, q_exact, return_probability
from .partition import (PartitionField, conditional_density, endpoint_law,
                        forward_partition, i_n_statistic, reversed_partition,
                        reversed_totals)
from .overlap import (PairChainState, conditioned_pair_expectation, overlap_mc,
                      pair_chain_state, pair_expectation,
                      second_moment_identity_check)
from .llt import (LltScanConfig, residual_l2_scan, reversed_tail_equivalence_check,
                  factorization_residual, zinf_proxy_cauchy_check, zinf_residual_l1_scan)
from .brownian import (PoissonEnvironment, TubeGeometry, bridge_sample,
                       brownian_partition_mc, continuous_llt_residual_scan,
                       continuous_second_moment_check, overlap_volume, tube_count)

__version__ = "0.1.0"

__all__ = [
    "DisorderSpec", "EnvironmentField", "l2_region_check", "lambda2", "log_mgf",
    "KernelTable", "llt_error_scan", "parity", "q_bar", "q_exact",
    "return_probability",
    "PartitionField", "conditional_density", "endpoint_law", "forward_partition",
    "i_n_statistic", "reversed_partition", "reversed_totals",
    "PairChainState", "conditioned_pair_expectation", "overlap_mc",
    "pair_chain_state", "pair_expectation", "second_moment_identity_check",
    "LltScanConfig", "residual_l2_scan", "reversed_tail_equivalence_check",
    "factorization_residual", "zinf_proxy_cauchy_check", "zinf_residual_l1_scan",
    "PoissonEnvironment", "TubeGeometry", "bridge_sample", "brownian_partition_mc",
    "continuous_llt_residual_scan", "continuous_second_moment_check",
    "overlap_volume", "tube_count",
    "__version__",
]
