"""Quasi-dynamic traffic assignment: interval-wise truncated user equilibrium with residual demand."""
from .assignment import (LINE_SEARCH, MSA, FwResult, StepSizeStrategy, all_or_nothing, converged,
                         cost_probe, frank_wolfe, line_search, msa_step)
from .demand import (DemandMatrix, DemandPartition, TripRecord, bin_demand, merge_residual,
                     partition_demand, read_rates_csv, read_trips_csv)
from .engine import (QDTA, STA, IntervalResult, MetricsReport, QdtaResult, ScenarioConfig,
                     compute_metrics, residual_demand, run_qdta, run_sta, vehicle_hours)
from .errors import ConfigError, SolverError, StructuralError, Unreachable
from .fixtures import gen_fixture
from .loading import PathFlowMap, PathKey, TruncatedPath, path_flows_to_link_flows, truncate_path
from .network import (Link, Network, bpr_travel_time, link_potential, read_network_csv, total_cost,
                      update_costs)
from .parallel import LinkPartition, all_reduce_sum, partition_links
from .router import Path, RoutingIndex, customize, preprocess, query

__all__ = [
    "LINE_SEARCH", "MSA", "QDTA", "STA",
    "ConfigError", "DemandMatrix", "DemandPartition", "FwResult", "IntervalResult", "Link",
    "LinkPartition", "MetricsReport", "Network", "Path", "PathFlowMap", "PathKey", "QdtaResult",
    "RoutingIndex", "ScenarioConfig", "SolverError", "StepSizeStrategy", "StructuralError",
    "TripRecord", "TruncatedPath", "Unreachable",
    "all_or_nothing", "all_reduce_sum", "bin_demand", "bpr_travel_time", "compute_metrics",
    "converged", "cost_probe", "customize", "frank_wolfe", "gen_fixture", "line_search",
    "link_potential", "merge_residual", "msa_step", "partition_demand", "partition_links",
    "path_flows_to_link_flows", "preprocess", "query", "read_network_csv", "read_rates_csv",
    "read_trips_csv", "residual_demand", "run_qdta", "run_sta", "total_cost", "truncate_path",
    "update_costs", "vehicle_hours",
]
