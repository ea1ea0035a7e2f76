"""Varied-density clustering on approximate neighborhood graphs.

The pipeline has three stages: find (approximate) nearest neighbors,
build a weighted kNN graph, and propagate cluster labels over it.
Each stage is usable on its own; `propagation.ping` wires them together.
"""

from .data_io import (
    Dataset,
    KernelFeatureConfig,
    estimate_sigma,
    kernel_map,
    load_csv,
    load_fvecs,
    load_labels,
    normalize_unit,
    save_csv,
    save_fvecs,
    save_labels,
)
from .spinner import StructuredSpinner, fht_inplace
from .ceos import (
    CeosIndex,
    CeosParams,
    NeighborList,
    Neighborhoods,
    build_index,
    knn_from_neighborhood,
    knn_lists,
    load_index,
    query_all,
    save_index,
)
from .graph import (
    KnnGraph,
    NeighborLists,
    build_graph,
    connected_components,
    exact_knn,
    write_graph_text,
)
from .propagation import DnpParams, Labeling, dnp, lpa, louvain, ping
from .dbscan import (
    DbscanParams,
    DbscanStarConfig,
    dbscan,
    dbscan_star,
    eps_from_density,
    knn_density,
    unit_ball_volume,
)
from .metrics import ContingencyTable, ami, ari, contingency, evaluate, nmi

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "KernelFeatureConfig",
    "estimate_sigma",
    "kernel_map",
    "load_csv",
    "load_fvecs",
    "load_labels",
    "normalize_unit",
    "save_csv",
    "save_fvecs",
    "save_labels",
    "StructuredSpinner",
    "fht_inplace",
    "CeosIndex",
    "CeosParams",
    "NeighborList",
    "Neighborhoods",
    "build_index",
    "knn_from_neighborhood",
    "knn_lists",
    "load_index",
    "query_all",
    "save_index",
    "KnnGraph",
    "NeighborLists",
    "build_graph",
    "connected_components",
    "exact_knn",
    "write_graph_text",
    "DnpParams",
    "Labeling",
    "dnp",
    "lpa",
    "louvain",
    "ping",
    "DbscanParams",
    "DbscanStarConfig",
    "dbscan",
    "dbscan_star",
    "eps_from_density",
    "knn_density",
    "unit_ball_volume",
    "ContingencyTable",
    "ami",
    "ari",
    "contingency",
    "evaluate",
    "nmi",
]
