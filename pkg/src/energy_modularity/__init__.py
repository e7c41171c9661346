"""Community detection in energy networks by energy-modularity maximisation."""

from .dispatch import (
    DispatchCache,
    DispatchResult,
    Method,
    build_lp,
    d_noflex,
    edge_total_flow,
    lp_flex,
    simulate_flex,
)
from .louvain import LouvainConfig, RunReport, best_of, louvain
from .modularity import (
    CommunityScore,
    EnergyModularity,
    ZeroDemandError,
    community_score,
    modularity_gain,
    partition_modularity,
)
from .network import (
    EdgeSpec,
    EnergyNetwork,
    FlexSpec,
    NetworkError,
    NodeSpec,
    Partition,
    PartitionError,
    TimeGrid,
    load_network,
    parse_network,
    prune_passive_nodes,
    serialize_network,
    total_demand,
)

__version__ = "0.1.0"
