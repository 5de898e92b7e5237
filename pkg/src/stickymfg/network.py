"""Metric networks, piecewise grid fields and the discrete calculus on them.

An edge ``alpha`` is parametrized by ``[0, L_alpha]``; its tail vertex sits at
``s = 0`` and its head at ``s = L_alpha``.  Fields store one uniform grid of
samples per edge, endpoint samples included, so a field may jump across a
vertex.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

import jsonschema
import numpy as np
from numpy.typing import NDArray

from .errors import InconsistentTraceError, NetworkError

H1_TOL = 1e-12
TAU_CONT = 1e-8

NETWORK_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["edges"],
    "properties": {
        "vertices": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id"],
                "properties": {
                    "id": {"type": "string"},
                    "eta": {"type": "number"},
                    "theta": {"type": "number"},
                    "coords": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "edges": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "from", "to", "length"],
                "properties": {
                    "id": {"type": "string"},
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "length": {"type": "number"},
                    "mu": {"type": "number"},
                    "grid_points": {"type": "integer"},
                    "gamma_from": {"type": "number"},
                    "gamma_to": {"type": "number"},
                },
            },
        },
        "normalize_gamma": {"type": "boolean"},
    },
}


@dataclass(frozen=True)
class EdgeData:
    id: str
    tail: int  # vertex at s = 0
    head: int  # vertex at s = L
    length: float
    mu: float
    n_points: int

    @property
    def h(self) -> float:
        return self.length / (self.n_points - 1)

    def grid(self) -> NDArray[np.float64]:
        return np.linspace(0.0, self.length, self.n_points)


@dataclass(frozen=True)
class VertexData:
    id: str
    is_boundary: bool
    gamma: Mapping[int, float]  # incident edge index -> gamma_{v,alpha}
    eta: float
    theta: float


@dataclass(frozen=True)
class Incidence:
    """One (vertex, edge) incidence: which end of the edge touches the vertex."""

    edge: int
    end: int  # 0 for the tail sample, -1 for the head sample
    sign: int  # n_{v,alpha}: -1 at the tail, +1 at the head


@dataclass(frozen=True)
class Network:
    vertices: tuple[VertexData, ...]
    edges: tuple[EdgeData, ...]
    incidence: tuple[tuple[Incidence, ...], ...] = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_vertices(self) -> list[int]:
        return [i for i, v in enumerate(self.vertices) if not v.is_boundary]

    @property
    def boundary_vertices(self) -> list[int]:
        return [i for i, v in enumerate(self.vertices) if v.is_boundary]

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def vertex_index(self, vid: str) -> int:
        for i, v in enumerate(self.vertices):
            if v.id == vid:
                return i
        raise KeyError(f"unknown vertex {vid!r}")

    def edge_index(self, eid: str) -> int:
        for i, e in enumerate(self.edges):
            if e.id == eid:
                return i
        raise KeyError(f"unknown edge {eid!r}")

    def grid(self, alpha: int) -> NDArray[np.float64]:
        return self.edges[alpha].grid()

    def incidence_of(self, v: int, alpha: int) -> Incidence:
        for inc in self.incidence[v]:
            if inc.edge == alpha:
                return inc
        raise NetworkError(f"edge {self.edges[alpha].id!r} is not incident to vertex {self.vertices[v].id!r}")

    def gamma(self, v: int, alpha: int) -> float:
        return self.vertices[v].gamma[alpha]

    def with_grid(self, n_points: int | Mapping[int, int]) -> Network:
        """Copy of the network with new grid sizes (one int for all edges, or per edge)."""
        edges = []
        for a, e in enumerate(self.edges):
            n = n_points if isinstance(n_points, int) else n_points.get(a, e.n_points)
            if n < 3:
                raise NetworkError("grid_points must be >= 3")
            edges.append(EdgeData(e.id, e.tail, e.head, e.length, e.mu, int(n)))
        return Network(self.vertices, tuple(edges), self.incidence)

    def refined(self, factor: int = 2) -> Network:
        """Every edge grid refined so that h shrinks by ``factor``."""
        return self.with_grid({a: (e.n_points - 1) * factor + 1 for a, e in enumerate(self.edges)})

    def with_vertex_data(self, v: int, **changes: Any) -> Network:
        vs = list(self.vertices)
        old = vs[v]
        vs[v] = VertexData(
            old.id,
            old.is_boundary,
            dict(changes.get("gamma", old.gamma)),
            float(changes.get("eta", old.eta)),
            float(changes.get("theta", old.theta)),
        )
        return Network(tuple(vs), self.edges, self.incidence)


# ---------------------------------------------------------------------------
# construction


def default_grid_points(length: float, min_length: float) -> int:
    return max(33, math.ceil(64.0 * length / min_length))


def build_network(spec: Mapping[str, Any]) -> Network:
    """Validate a network description (the JSON NetworkSpec) and build a :class:`Network`.

    Vertices referenced by edges but not listed get ``eta = theta = 0``.
    Missing ``gamma_from``/``gamma_to`` default to 1.  Boundary vertices are
    the degree-one vertices; stickiness given for them is dropped with a
    warning.
    """
    try:
        jsonschema.validate(dict(spec), NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise NetworkError(f"network spec schema violation: {exc.message}") from exc

    vlist = list(spec.get("vertices", []))
    elist = list(spec["edges"])
    normalize = bool(spec.get("normalize_gamma", False))

    ids: list[str] = []
    vattr: dict[str, dict[str, Any]] = {}
    for v in vlist:
        if v["id"] in vattr:
            raise NetworkError(f"duplicate vertex id {v['id']!r}")
        ids.append(v["id"])
        vattr[v["id"]] = v
    for e in elist:
        for key in ("from", "to"):
            if e[key] not in vattr:
                ids.append(e[key])
                vattr[e[key]] = {"id": e[key]}
    index = {vid: i for i, vid in enumerate(ids)}

    seen_edges: set[str] = set()
    min_len = min(float(e["length"]) for e in elist)
    if min_len <= 0:
        raise NetworkError("edge lengths must be strictly positive")
    edges: list[EdgeData] = []
    raw_gamma: dict[int, dict[int, float]] = {i: {} for i in range(len(ids))}
    for a, e in enumerate(elist):
        if e["id"] in seen_edges:
            raise NetworkError(f"duplicate edge id {e['id']!r}")
        seen_edges.add(e["id"])
        tail, head = index[e["from"]], index[e["to"]]
        if tail == head:
            raise NetworkError(f"edge {e['id']!r} is a self-loop")
        length = float(e["length"])
        mu = float(e.get("mu", 1.0))
        if not length > 0 or not math.isfinite(length):
            raise NetworkError(f"edge {e['id']!r}: length must be > 0")
        if not mu > 0 or not math.isfinite(mu):
            raise NetworkError(f"edge {e['id']!r}: diffusivity mu must be > 0")
        n = int(e.get("grid_points", default_grid_points(length, min_len)))
        if n < 3:
            raise NetworkError(f"edge {e['id']!r}: grid_points must be >= 3")
        edges.append(EdgeData(e["id"], tail, head, length, mu, n))
        for end, key in ((tail, "gamma_from"), (head, "gamma_to")):
            g = float(e.get(key, 1.0))
            if not g > 0:
                raise NetworkError(f"edge {e['id']!r}: {key} must be > 0")
            raw_gamma[end][a] = g

    incidence: list[list[Incidence]] = [[] for _ in ids]
    for a, e in enumerate(edges):
        incidence[e.tail].append(Incidence(a, 0, -1))
        incidence[e.head].append(Incidence(a, -1, +1))

    _check_connected(len(ids), edges)

    vertices: list[VertexData] = []
    for i, vid in enumerate(ids):
        attrs = vattr[vid]
        deg = len(incidence[i])
        boundary = deg == 1
        eta = float(attrs.get("eta", 0.0))
        theta = float(attrs.get("theta", 0.0))
        gamma = dict(raw_gamma[i])
        if boundary:
            if eta != 0.0:
                warnings.warn(f"boundary vertex {vid!r}: eta ignored (set to 0)", stacklevel=2)
            eta = 0.0
            gamma = {a: 1.0 for a in gamma}
        else:
            if eta < 0 or not math.isfinite(eta):
                raise NetworkError(f"vertex {vid!r}: eta must be >= 0")
            total = sum(edges[a].mu * g for a, g in gamma.items())
            if normalize:
                gamma = {a: g / total for a, g in gamma.items()}
            elif abs(total - 1.0) > H1_TOL:
                raise NetworkError(
                    f"H1 violation at vertex {vid!r}: sum of mu*gamma = {total!r} != 1 "
                    "(set normalize_gamma to rescale)"
                )
        vertices.append(VertexData(vid, boundary, gamma, eta, theta))

    return Network(tuple(vertices), tuple(edges), tuple(tuple(x) for x in incidence))


def _check_connected(n_vertices: int, edges: list[EdgeData]) -> None:
    adj: list[list[int]] = [[] for _ in range(n_vertices)]
    for e in edges:
        adj[e.tail].append(e.head)
        adj[e.head].append(e.tail)
    seen = {0}
    queue = deque([0])
    while queue:
        for w in adj[queue.popleft()]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    if len(seen) != n_vertices:
        raise NetworkError("network is not connected")


def network_to_spec(net: Network) -> dict[str, Any]:
    """Inverse of :func:`build_network` (gamma already normalized)."""
    verts = [{"id": v.id, "eta": v.eta, "theta": v.theta} for v in net.vertices]
    edges = []
    for a, e in enumerate(net.edges):
        edges.append(
            {
                "id": e.id,
                "from": net.vertices[e.tail].id,
                "to": net.vertices[e.head].id,
                "length": e.length,
                "mu": e.mu,
                "grid_points": e.n_points,
                "gamma_from": net.vertices[e.tail].gamma[a],
                "gamma_to": net.vertices[e.head].gamma[a],
            }
        )
    return {"vertices": verts, "edges": edges, "normalize_gamma": False}


# ---------------------------------------------------------------------------
# fields


def _frozen(a: Any) -> NDArray[np.float64]:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EdgeField:
    """Piecewise grid function: one read-only sample vector per edge."""

    values: tuple[NDArray[np.float64], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(_frozen(v) for v in self.values))

    @classmethod
    def zeros(cls, net: Network) -> EdgeField:
        return cls(tuple(np.zeros(e.n_points) for e in net.edges))

    @classmethod
    def constant(cls, net: Network, c: float) -> EdgeField:
        return cls(tuple(np.full(e.n_points, float(c)) for e in net.edges))

    @classmethod
    def from_function(cls, net: Network, f: Callable[[int, NDArray[np.float64]], Any]) -> EdgeField:
        """Sample ``f(alpha, s)`` on every edge grid."""
        out = []
        for a, e in enumerate(net.edges):
            s = e.grid()
            out.append(np.broadcast_to(np.asarray(f(a, s), dtype=float), s.shape).copy())
        return cls(tuple(out))

    @classmethod
    def from_flat(cls, net: Network, flat: NDArray[np.float64]) -> EdgeField:
        out, k = [], 0
        for e in net.edges:
            out.append(flat[k : k + e.n_points])
            k += e.n_points
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[NDArray[np.float64]]:
        return iter(self.values)

    def __getitem__(self, alpha: int) -> NDArray[np.float64]:
        return self.values[alpha]

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate(self.values)

    def map(self, fn: Callable[[NDArray[np.float64]], Any]) -> EdgeField:
        return EdgeField(tuple(np.asarray(fn(v), dtype=float) for v in self.values))

    def _binary(self, other: Any, op: Callable[[Any, Any], Any]) -> EdgeField:
        if isinstance(other, EdgeField):
            if len(other) != len(self):
                raise ValueError("edge count mismatch")
            return EdgeField(tuple(op(a, b) for a, b in zip(self.values, other.values)))
        return EdgeField(tuple(op(a, other) for a in self.values))

    def __add__(self, other: Any) -> EdgeField:
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other: Any) -> EdgeField:
        return self._binary(other, np.subtract)

    def __rsub__(self, other: Any) -> EdgeField:
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other: Any) -> EdgeField:
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> EdgeField:
        return self._binary(other, np.divide)

    def __neg__(self) -> EdgeField:
        return self.map(np.negative)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(v)) for v in self.values))

    def min(self) -> float:
        return float(min(np.min(v) for v in self.values))

    def max(self) -> float:
        return float(max(np.max(v) for v in self.values))

    def endpoint(self, inc: Incidence) -> float:
        return float(self.values[inc.edge][inc.end])

    def matches(self, net: Network) -> bool:
        return len(self.values) == net.n_edges and all(
            v.shape == (e.n_points,) for v, e in zip(self.values, net.edges)
        )


def resample(f: EdgeField, src: Network, dst: Network) -> EdgeField:
    """Linear interpolation of ``f`` from the grids of ``src`` onto those of ``dst``."""
    return EdgeField(tuple(np.interp(dst.grid(a), src.grid(a), f[a]) for a in range(src.n_edges)))


@dataclass(frozen=True, eq=False)
class GraphMeasure:
    """Density on the edges plus one atom per interior vertex."""

    density: EdgeField
    atoms: Mapping[int, float]

    def interior_mass(self, net: Network) -> float:
        return quadrature(self.density, net)

    def total_mass(self, net: Network) -> float:
        return self.interior_mass(net) + float(sum(self.atoms.values()))

    def trace_ratios(self, net: Network, tol: float = TAU_CONT) -> dict[int, float]:
        return {v: trace_ratio(self.density, v, net, tol) for v in net.interior_vertices}

    def mix(self, other: GraphMeasure, tau: float) -> GraphMeasure:
        """Convex combination ``(1 - tau) * self + tau * other``."""
        dens = self.density * (1.0 - tau) + other.density * tau
        atoms = {v: (1.0 - tau) * self.atoms.get(v, 0.0) + tau * other.atoms.get(v, 0.0) for v in self.atoms}
        return GraphMeasure(dens, atoms)

    def distance(self, other: GraphMeasure) -> float:
        """Sup-norm density gap plus the largest atom gap."""
        dens = (self.density - other.density).max_abs()
        atom = max((abs(self.atoms[v] - other.atoms.get(v, 0.0)) for v in self.atoms), default=0.0)
        return dens + atom


# ---------------------------------------------------------------------------
# discrete calculus


def derivative(f: EdgeField, net: Network) -> EdgeField:
    """d/ds along each edge: centered inside, second-order one-sided at the ends."""
    out = []
    for a, e in enumerate(net.edges):
        if e.n_points < 3:
            raise NetworkError("derivative needs at least 3 grid points per edge")
        out.append(np.gradient(f[a], e.h, edge_order=2))
    return EdgeField(tuple(out))


def second_derivative(f: EdgeField, net: Network) -> EdgeField:
    """Three-point second difference; endpoint values copied from the neighbouring node."""
    out = []
    for a, e in enumerate(net.edges):
        v = f[a]
        d2 = np.empty_like(v)
        d2[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / e.h**2
        d2[0], d2[-1] = d2[1], d2[-2]
        out.append(d2)
    return EdgeField(tuple(out))


def endpoint_slope(values: NDArray[np.float64], h: float, end: int) -> float:
    """Second-order one-sided d/ds at the tail (end=0) or head (end=-1) sample."""
    if end == 0:
        return (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
    return (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)


def outward_derivative(f: EdgeField, v: int, alpha: int, net: Network) -> float:
    """Outward directional derivative of ``f|_alpha`` at vertex ``v``."""
    inc = net.incidence_of(v, alpha)
    return inc.sign * endpoint_slope(f[alpha], net.edges[alpha].h, inc.end)


def quadrature(f: EdgeField, net: Network) -> float:
    """Composite trapezoid rule summed over edges."""
    return float(sum(np.trapezoid(f[a], dx=e.h) for a, e in enumerate(net.edges)))


def trapezoid_weights(net: Network) -> NDArray[np.float64]:
    """Flattened trapezoid weights, so that ``w @ f.flat() == quadrature(f)``."""
    ws = []
    for e in net.edges:
        w = np.full(e.n_points, e.h)
        w[0] = w[-1] = 0.5 * e.h
        ws.append(w)
    return np.concatenate(ws)


def trace_ratio(m: EdgeField, v: int, net: Network, tol: float = TAU_CONT) -> float:
    """Common value of ``m|_alpha(v) / gamma_{v,alpha}`` over the edges at ``v``.

    Returned as the gamma-weighted average of the per-edge ratios, which is
    ``sum_alpha m_alpha(v) / sum_alpha gamma_{v,alpha}``.  Ratios must agree to
    ``tol`` relative to ``max(1, |T_v|)``.
    """
    vert = net.vertices[v]
    if vert.is_boundary:
        raise NetworkError(f"vertex {vert.id!r} is a boundary vertex")
    traces = np.array([m.endpoint(inc) for inc in net.incidence[v]])
    gammas = np.array([vert.gamma[inc.edge] for inc in net.incidence[v]])
    ratios = traces / gammas
    t = float(np.sum(traces) / np.sum(gammas))
    spread = float(np.max(np.abs(ratios - t)))
    if spread > tol * max(1.0, abs(t)):
        raise InconsistentTraceError(
            f"traces at vertex {vert.id!r} are not gamma-consistent: ratios {ratios.tolist()}"
        )
    return t


def is_continuous(f: EdgeField, net: Network, tol: float = TAU_CONT) -> bool:
    """True when the edge traces agree at every vertex."""
    for v in range(net.n_vertices):
        vals = [f.endpoint(inc) for inc in net.incidence[v]]
        if max(vals) - min(vals) > tol * max(1.0, max(abs(x) for x in vals)):
            return False
    return True


def vertex_value(f: EdgeField, v: int, net: Network) -> float:
    """Mean of the edge traces at ``v`` (the vertex value of a continuous field)."""
    return float(np.mean([f.endpoint(inc) for inc in net.incidence[v]]))
