# Licensed under the Apache License 2.0, see LICENSE file.

import logging

from graphfkpp.bvm import BiasedVoterModel
from graphfkpp.config import GraphConfig
from graphfkpp.metric_graph import DiscretizedGraph, MetricGraph, build_graph, discretize
from graphfkpp.scaling import MacroParams, MicroParams, micro_from_macro
from graphfkpp.sde import SDEScheme, WhiteNoiseLattice

# numba reports every cached-function lookup at DEBUG level
logging.getLogger("numba").setLevel(logging.WARNING)

__all__ = [
    "BiasedVoterModel",
    "DiscretizedGraph",
    "GraphConfig",
    "MacroParams",
    "MetricGraph",
    "MicroParams",
    "SDEScheme",
    "WhiteNoiseLattice",
    "build_graph",
    "discretize",
    "micro_from_macro",
]
