"""Stationary mean field games on metric graphs with sticky vertices.

Modules: ``network`` (graphs, edge fields, measures), ``fokker_planck``
(invariant measures), ``hamiltonian`` and ``hjb`` (discounted and ergodic
HJB equations), ``mfg`` (coupled system), ``sde_sim`` (Markov chain
simulation) and ``cli``.
"""

from .errors import (ConfigError, DomainError, InconsistentTraceError, NetworkError, NotAdmissibleError,
                     PositivityError, SolverError, StickyMFGError)
from .network import EdgeField, GraphMeasure, Network, build_network

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "EdgeField", "GraphMeasure", "InconsistentTraceError", "Network",
    "NetworkError", "NotAdmissibleError", "PositivityError", "SolverError", "StickyMFGError", "build_network",
]
