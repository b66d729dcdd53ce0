"""Barnes-Hut treecode N-body engine with shared-memory, ORB-rank and
GridRPC-style distributed execution strategies."""

from .bodies import Body, BodySet
from .forces import brute_force_accels, compute_force, compute_forces, total_energy
from .integrate import step_leapfrog
from .orb import collect_essential_nodes, locate_rank, merge_essential, orb_partition
from .params import SimParams
from .tree import BoundingBox, Tree, build_tree, compute_mass_moments
from .walk import InteractionList, InteractionLists, build_interaction_list, build_interaction_lists

__version__ = "0.1.0"

__all__ = ["Body", "BodySet", "brute_force_accels", "compute_force", "compute_forces",
           "total_energy", "step_leapfrog", "collect_essential_nodes", "locate_rank",
           "merge_essential", "orb_partition", "SimParams", "BoundingBox", "Tree", "build_tree",
           "compute_mass_moments", "InteractionList", "InteractionLists",
           "build_interaction_list", "build_interaction_lists"]
