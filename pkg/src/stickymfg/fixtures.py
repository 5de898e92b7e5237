"""Named network specs used by the tests, the CLI self-test and the docs."""

from __future__ import annotations

import copy
from typing import Any

import numpy as np

from .network import EdgeField, Network


def sticky_star(n: int = 65, eta: float = 0.5) -> dict[str, Any]:
    """Two unit edges hanging off one sticky vertex, gamma = 1/2 on both."""
    return {
        "vertices": [{"id": "c", "eta": eta, "theta": 0.0}, {"id": "l1"}, {"id": "l2"}],
        "edges": [
            {"id": "e1", "from": "c", "to": "l1", "length": 1.0, "mu": 1.0, "grid_points": n,
             "gamma_from": 0.5},
            {"id": "e2", "from": "c", "to": "l2", "length": 1.0, "mu": 1.0, "grid_points": n,
             "gamma_from": 0.5},
        ],
        "normalize_gamma": False,
    }


def single_edge(n: int = 65, length: float = 1.0, mu: float = 1.0) -> dict[str, Any]:
    return {
        "vertices": [{"id": "v0"}, {"id": "v1"}],
        "edges": [{"id": "e1", "from": "v0", "to": "v1", "length": length, "mu": mu, "grid_points": n}],
    }


def asymmetric_star(n: int = 65) -> dict[str, Any]:
    """Three edges of different length and diffusivity, mixed orientation."""
    return {
        "vertices": [{"id": "c", "eta": 0.3, "theta": 0.5}, {"id": "a"}, {"id": "b"}, {"id": "d"}],
        "edges": [
            {"id": "e1", "from": "c", "to": "a", "length": 1.0, "mu": 1.0, "grid_points": n, "gamma_from": 1.0},
            {"id": "e2", "from": "b", "to": "c", "length": 0.7, "mu": 0.5, "grid_points": n, "gamma_to": 2.0},
            {"id": "e3", "from": "c", "to": "d", "length": 1.3, "mu": 2.0, "grid_points": n, "gamma_from": 1.0},
        ],
        "normalize_gamma": True,
    }


def triangle_with_tail(n: int = 65) -> dict[str, Any]:
    """A cycle A-B-C with a pendant edge A-D; B is non-sticky."""
    return {
        "vertices": [
            {"id": "A", "eta": 0.2, "theta": 1.0},
            {"id": "B", "eta": 0.0, "theta": 0.0},
            {"id": "C", "eta": 1.0, "theta": -0.5},
            {"id": "D"},
        ],
        "edges": [
            {"id": "ab", "from": "A", "to": "B", "length": 1.0, "mu": 1.0, "grid_points": n,
             "gamma_from": 1.0, "gamma_to": 1.0},
            {"id": "bc", "from": "B", "to": "C", "length": 0.8, "mu": 0.6, "grid_points": n,
             "gamma_from": 1.0, "gamma_to": 2.0},
            {"id": "ca", "from": "C", "to": "A", "length": 1.2, "mu": 1.5, "grid_points": n,
             "gamma_from": 1.0, "gamma_to": 0.5},
            {"id": "ad", "from": "A", "to": "D", "length": 0.9, "mu": 0.8, "grid_points": n,
             "gamma_from": 1.0},
        ],
        "normalize_gamma": True,
    }


def with_grid(spec: dict[str, Any], n: int) -> dict[str, Any]:
    out = copy.deepcopy(spec)
    for e in out["edges"]:
        e["grid_points"] = n
    return out


def smooth_drift(net: Network, amplitude: float = 1.0) -> EdgeField:
    """A fixed smooth drift, discontinuous across vertices, for the fixture networks."""

    def f(a: int, s: np.ndarray) -> np.ndarray:
        L = net.edges[a].length
        return amplitude * (np.sin(2.0 * np.pi * s / L + a) + 0.3 * (a - 1))

    return EdgeField.from_function(net, f)


DUALITY_FIXTURES = {
    "sticky_star": (sticky_star, 0.0),
    "asymmetric_star": (asymmetric_star, 1.0),
    "triangle_with_tail": (triangle_with_tail, 0.7),
}
