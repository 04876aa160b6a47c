"""Tree-reweighted upper bounds on the log partition function of discrete MRFs."""

from .energy import Pseudomarginals, TreeMixture, free_energy, jensen_bound
from .errors import TreeboundError
from .exact import brute_force_log_partition, variable_elimination_log_partition
from .graphs import Graph, SpanningTree, complete, cycle, grid, parse_graph_spec
from .inner import InnerOptions, minimize_free_energy
from .meanfield import naive_mean_field_lower_bound
from .model import MinimalIsingParams, OvercompleteParams, load_model, save_model, to_overcomplete
from .outer import OuterOptions, optimize_edge_appearance

__all__ = [
    "Graph", "SpanningTree", "grid", "complete", "cycle", "parse_graph_spec",
    "MinimalIsingParams", "OvercompleteParams", "to_overcomplete", "load_model", "save_model",
    "brute_force_log_partition", "variable_elimination_log_partition",
    "Pseudomarginals", "TreeMixture", "free_energy", "jensen_bound",
    "InnerOptions", "minimize_free_energy", "OuterOptions", "optimize_edge_appearance",
    "naive_mean_field_lower_bound", "TreeboundError",
]
__version__ = "0.1.0"
