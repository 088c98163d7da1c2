"""Wait-free decentralized federated learning: coefficient selection, simulator and baselines."""

from .baselines import metropolis_weights, run_sync
from .engine import CommunicationSet, DivergenceError, RunRecord, Timing, run_event_driven, run_probabilistic
from .topology import Topology, make_complete, make_ring, make_ring_of_cliques, parse_topology
from .weights import ccs, decay_check, expected_matrix, spectral, verify_expectation

__all__ = [
    "CommunicationSet",
    "DivergenceError",
    "RunRecord",
    "Timing",
    "Topology",
    "ccs",
    "decay_check",
    "expected_matrix",
    "make_complete",
    "make_ring",
    "make_ring_of_cliques",
    "metropolis_weights",
    "parse_topology",
    "run_event_driven",
    "run_probabilistic",
    "run_sync",
    "spectral",
    "verify_expectation",
]
