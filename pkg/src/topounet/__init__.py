"""Rank-path encoder-decoder networks on combinatorial complexes."""

from .complexes import (
    AdjacencyOperator,
    Cochain,
    CombinatorialComplex,
    IncidenceOperator,
    RankPath,
    SparseMatrix,
    adjacency,
    incidence,
    min_bottleneck_width,
    reindex,
    support_profile,
    validate_complex,
)
from .lifting import (
    GraphInput,
    GridInput,
    HypergraphInput,
    LiftError,
    PointCloudInput,
    lift_graph,
    lift_grid,
    lift_hypergraph,
    lift_point_cloud,
)
from .model import (
    RefinementSpec,
    TopoUNet,
    TopoUNetConfig,
    TransportSpec,
    count_parameters,
    linear_capacity_probe,
    transport_down,
    transport_up,
)

__version__ = "0.1.0"
