"""Optimal transport for polyhedral norm costs on discrete measures."""
from .errors import *  # noqa: F401,F403
from .kantorovich import (
    ConeCost,
    NormCost,
    QuadraticCost,
    RestrictedCost,
    TransportPlan,
    duality_gap,
    extract_potentials,
    solve_primal,
)
from .measures import DiscreteMeasure, grid_sample, load_measure
from .monge import assemble_map, secondary_select, verify_pushforward
from .partition import partition_from_plan
from .polynorm import PolyhedralNorm, l1_norm, linf_norm, load_norm, regular_polygon_norm

__version__ = "0.1.0"
