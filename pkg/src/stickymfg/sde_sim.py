"""Continuous-time Markov chain approximation of the sticky diffusion, and Monte Carlo estimators.

States are the grid vertices (one state per network vertex) followed by the
interior grid nodes of every edge.  An interior node jumps to its neighbours
at rates ``mu/h^2 +- b/(2h)`` (first-order upwind if one of these would be
negative).  An interior vertex ``v`` jumps to the first node of edge
``alpha`` at rate ``mu gamma / (h (eta + c_v))`` with ``c_v = sum gamma h / 2``,
which makes ``(Q f)(v)`` consistent with ``eta G f(v) + sum mu gamma d f(v) = 0``.
A boundary vertex is the same construction with ``eta = 0``, ``gamma = 1``.

The vertex state absorbs the half cells of the adjacent edges, so its
stationary weight approximates ``T_v (eta_v + c_v)``; the atom estimate is
``eta_v / (eta_v + c_v)`` times the vertex fraction.

Trajectories use an xoroshiro128+ stream seeded by SplitMix64 from
``(seed, trajectory index)``, so every batch estimate is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .network import EdgeField, Network, resample

Array = NDArray[np.float64]

DEFAULT_T = 1e4
DEFAULT_BURN_IN = 1e2
DEFAULT_NTRAJ = 100


# ---------------------------------------------------------------------------
# chain construction


@dataclass(frozen=True, eq=False)
class CTMCApprox:
    net: Network  # the network carrying the chain's grid
    drift: EdgeField  # drift sampled on that grid
    node_state: tuple[NDArray[np.int64], ...]  # grid node -> state, per edge
    state_edge: NDArray[np.int64]  # edge of a node state, -1 for vertices
    state_pos: Array  # arclength of a node state (0 for vertices)
    Q: sp.csr_matrix
    half_cell: dict[int, float]  # c_v = sum_alpha gamma_{v,alpha} h_alpha / 2
    n_upwind: int
    indptr: NDArray[np.int64] = field(repr=False)
    targets: NDArray[np.int64] = field(repr=False)
    cumprob: Array = field(repr=False)
    exit_rate: Array = field(repr=False)

    @property
    def n_states(self) -> int:
        return int(self.exit_rate.size)

    def vertex_weight(self, v: int) -> float:
        """``eta_v + c_v``: the vertex-state mass per unit of ``T_v``."""
        return self.net.vertices[v].eta + self.half_cell[v]

    def state_of(self, alpha: int, s: float) -> int:
        """Nearest chain state to arclength ``s`` on edge ``alpha``."""
        e = self.net.edges[alpha]
        j = int(round(s / e.h))
        return int(self.node_state[alpha][min(max(j, 0), e.n_points - 1)])


def ctmc_grid(net: Network, h_target: float) -> Network:
    """Copy of ``net`` with per-edge grids of spacing as close to ``h_target`` as possible."""
    if not h_target > 0:
        raise ValueError("h_target must be > 0")
    return net.with_grid({a: max(3, int(round(e.length / h_target)) + 1) for a, e in enumerate(net.edges)})


def build_ctmc(b: EdgeField, net: Network, h_target: float | None) -> CTMCApprox:
    """Generator matrix of the chain for drift ``b`` (given on ``net``'s grid).

    ``h_target=None`` keeps the grid of ``net``.
    """
    qnet = net if h_target is None else ctmc_grid(net, h_target)
    bq = b if all(e.n_points == f.n_points for e, f in zip(net.edges, qnet.edges)) else resample(b, net, qnet)
    n_v = qnet.n_vertices
    node_state = []
    state_edge = [-1] * n_v
    state_pos = [0.0] * n_v
    k = n_v
    for a, e in enumerate(qnet.edges):
        idx = np.empty(e.n_points, dtype=np.int64)
        idx[0], idx[-1] = e.tail, e.head
        idx[1:-1] = np.arange(k, k + e.n_points - 2)
        k += e.n_points - 2
        node_state.append(idx)
        state_edge += [a] * (e.n_points - 2)
        state_pos += list(e.grid()[1:-1])
    n = k
    rows: list[int] = []
    cols: list[int] = []
    rates: list[float] = []
    n_up = 0
    for a, e in enumerate(qnet.edges):
        h, mu, ba = e.h, e.mu, bq[a]
        idx = node_state[a]
        for j in range(1, e.n_points - 1):
            right = mu / h**2 + ba[j] / (2 * h)
            left = mu / h**2 - ba[j] / (2 * h)
            if right < 0 or left < 0:
                right = mu / h**2 + max(ba[j], 0.0) / h
                left = mu / h**2 + max(-ba[j], 0.0) / h
                n_up += 1
            rows += [idx[j], idx[j]]
            cols += [idx[j - 1], idx[j + 1]]
            rates += [left, right]
    half: dict[int, float] = {}
    for v, vert in enumerate(qnet.vertices):
        c = 0.5 * sum(vert.gamma[i.edge] * qnet.edges[i.edge].h for i in qnet.incidence[v])
        half[v] = c
        d = vert.eta + c
        for inc in qnet.incidence[v]:
            e = qnet.edges[inc.edge]
            first = node_state[inc.edge][1 if inc.end == 0 else e.n_points - 2]
            rows.append(v)
            cols.append(int(first))
            rates.append(e.mu * vert.gamma[inc.edge] / (e.h * d))
    off = sp.csr_matrix((rates, (rows, cols)), shape=(n, n))
    off.sum_duplicates()
    out_rate = np.asarray(off.sum(axis=1)).ravel()
    Q = (off - sp.diags(out_rate)).tocsr()
    indptr = off.indptr.astype(np.int64)
    targets = off.indices.astype(np.int64)
    cum = np.empty(off.data.size)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        c = np.cumsum(off.data[lo:hi]) / out_rate[i]
        c[-1] = 1.0
        cum[lo:hi] = c
    return CTMCApprox(qnet, bq, tuple(node_state), np.array(state_edge, dtype=np.int64),
                      np.array(state_pos), Q, half, n_up, indptr, targets, cum, out_rate)


def stationary_distribution(q: CTMCApprox) -> Array:
    """Exact stationary law of the chain (``pi Q = 0``, ``sum pi = 1``) by a sparse solve."""
    A = q.Q.T.tolil()
    A[0, :] = np.ones(q.n_states)
    rhs = np.zeros(q.n_states)
    rhs[0] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# random streams and kernels


@numba.njit(inline="always")
def _rotl(x, k):
    return (x << numba.uint64(k)) | (x >> numba.uint64(64 - k))


@numba.njit(inline="always")
def _splitmix(x):
    x = x + numba.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(0x94D049BB133111EB)
    return z ^ (z >> numba.uint64(31))


@numba.njit(inline="always")
def _seed_state(seed, index):
    s = np.empty(2, np.uint64)
    key = _splitmix(numba.uint64(seed))
    s[0] = _splitmix(key ^ numba.uint64(index))
    s[1] = _splitmix(s[0])
    if s[0] == 0 and s[1] == 0:
        s[1] = numba.uint64(1)
    return s


@numba.njit(inline="always")
def _uniform(s):
    """Uniform on (0, 1) from xoroshiro128+."""
    s0 = s[0]
    s1 = s[1]
    r = s0 + s1
    s1 ^= s0
    s[0] = _rotl(s0, 24) ^ s1 ^ (s1 << numba.uint64(16))
    s[1] = _rotl(s1, 37)
    return ((r >> numba.uint64(11)) + numba.uint64(1)) * (1.0 / 9007199254740993.0)


@numba.njit(inline="always")
def _jump(x, u, indptr, targets, cum):
    k = indptr[x]
    last = indptr[x + 1] - 1
    while k < last and cum[k] < u:
        k += 1
    return targets[k]


@numba.njit(cache=True)
def _path_kernel(indptr, targets, cum, rate, x0, T, seed, index):
    cap = 1024
    times = np.empty(cap)
    states = np.empty(cap, np.int64)
    times[0] = 0.0
    states[0] = x0
    n = 1
    s = _seed_state(seed, index)
    t = 0.0
    x = x0
    while True:
        t += -np.log(_uniform(s)) / rate[x]
        if t > T:
            break
        x = _jump(x, _uniform(s), indptr, targets, cum)
        if n == cap:
            cap *= 2
            nt = np.empty(cap)
            ns = np.empty(cap, np.int64)
            nt[:n] = times[:n]
            ns[:n] = states[:n]
            times, states = nt, ns
        times[n] = t
        states[n] = x
        n += 1
    return times[:n].copy(), states[:n].copy()


@numba.njit(cache=True)
def _occupation_kernel(indptr, targets, cum, rate, x0, T, burn, seed, first, n_traj):
    occ = np.zeros((n_traj, rate.size))
    events = 0
    for r in range(n_traj):
        s = _seed_state(seed, first + r)
        t = 0.0
        x = x0
        row = occ[r]
        while True:
            t1 = t - np.log(_uniform(s)) / rate[x]
            if t1 > burn:
                a = t if t > burn else burn
                b = t1 if t1 < T else T
                row[x] += b - a
            if t1 >= T:
                break
            x = _jump(x, _uniform(s), indptr, targets, cum)
            t = t1
            events += 1
    return occ, events


@numba.njit(cache=True)
def _discounted_kernel(indptr, targets, cum, rate, cost, x0, lam, T, seed, n_traj):
    out = np.zeros(n_traj)
    for r in range(n_traj):
        s = _seed_state(seed, r)
        t = 0.0
        x = x0
        acc = 0.0
        while True:
            t1 = t - np.log(_uniform(s)) / rate[x]
            b = t1 if t1 < T else T
            acc += cost[x] * (np.exp(-lam * t) - np.exp(-lam * b)) / lam
            if t1 >= T:
                break
            x = _jump(x, _uniform(s), indptr, targets, cum)
            t = t1
        out[r] = acc
    return out


# ---------------------------------------------------------------------------
# trajectories and occupation estimates


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: Array  # jump times, times[0] = 0
    states: NDArray[np.int64]  # state entered at each time
    horizon: float
    seed: int
    index: int = 0

    def holding_intervals(self) -> tuple[Array, Array, NDArray[np.int64]]:
        """``(start, end, state)`` of every holding interval, clipped to the horizon."""
        ends = np.append(self.times[1:], self.horizon)
        return self.times, ends, self.states


def simulate(q: CTMCApprox, x0: int, T: float, seed: int, index: int = 0) -> Trajectory:
    """Exact (Gillespie) path of the chain on ``[0, T]``, reproducible from ``(seed, index)``."""
    if T < 0:
        raise ValueError("horizon T must be >= 0")
    if T == 0:
        return Trajectory(np.zeros(1), np.array([x0], dtype=np.int64), 0.0, seed, index)
    times, states = _path_kernel(q.indptr, q.targets, q.cumprob, q.exit_rate, int(x0), float(T), int(seed),
                                 int(index))
    return Trajectory(times, states, float(T), int(seed), int(index))


@dataclass(frozen=True, eq=False)
class OccupationEstimate:
    fractions: Array  # time fraction per chain state (sums to one)
    fractions_se: Array
    density: EdgeField  # occupation density on the chain grid
    density_se: EdgeField
    vertex_fraction: dict[int, float]  # raw time fraction of each vertex state
    vertex_fraction_se: dict[int, float]
    atoms: dict[int, float]  # atom estimates eta_v / (eta_v + c_v) * vertex fraction
    atoms_se: dict[int, float]
    horizon: float
    burn_in: float
    n_traj: int
    warnings: list[str] = field(default_factory=list)
    events: int = 0


def _estimate(q: CTMCApprox, per_traj: Array, horizon: float, burn_in: float, warnings: list[str],
              events: int = 0) -> OccupationEstimate:
    totals = per_traj.sum(axis=1, keepdims=True)
    frac = per_traj / totals
    n_traj = frac.shape[0]
    mean = frac.mean(axis=0)
    se = frac.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else np.zeros_like(mean)
    return _from_fractions(q, mean, se, horizon, burn_in, n_traj, warnings, events)


def _from_fractions(q, mean, se, horizon, burn_in, n_traj, warnings, events=0) -> OccupationEstimate:
    net = q.net
    dens, dse = [], []
    for a, e in enumerate(net.edges):
        idx = q.node_state[a]
        d = mean[idx] / e.h
        s = se[idx] / e.h
        for end, v in ((0, e.tail), (-1, e.head)):
            g = net.vertices[v].gamma[a]
            d[end] = g * mean[v] / q.vertex_weight(v)
            s[end] = g * se[v] / q.vertex_weight(v)
        dens.append(d)
        dse.append(s)
    vf = {v: float(mean[v]) for v in range(net.n_vertices)}
    vse = {v: float(se[v]) for v in range(net.n_vertices)}
    atoms, ase = {}, {}
    for v in net.interior_vertices:
        w = net.vertices[v].eta / q.vertex_weight(v)
        atoms[v] = w * vf[v]
        ase[v] = w * vse[v]
    return OccupationEstimate(mean, se, EdgeField(tuple(dens)), EdgeField(tuple(dse)), vf, vse, atoms, ase,
                              float(horizon), float(burn_in), int(n_traj), list(warnings), int(events))


def _burn_in_warnings(T: float, burn_in: float) -> list[str]:
    if T - burn_in < 10 * burn_in:
        return [f"post-burn-in time {T - burn_in:g} is less than 10x burn_in {burn_in:g}"]
    return []


def occupation_measure(trajectories: list[Trajectory], q: CTMCApprox, burn_in: float) -> OccupationEstimate:
    """Time-average occupation after ``burn_in`` from stored paths; trajectories are the batches."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    per = np.zeros((len(trajectories), q.n_states))
    for r, tr in enumerate(trajectories):
        start, end, st = tr.holding_intervals()
        dur = np.clip(end, burn_in, tr.horizon) - np.clip(start, burn_in, tr.horizon)
        np.add.at(per[r], st, dur)
    horizon = min(tr.horizon for tr in trajectories)
    return _estimate(q, per, horizon, burn_in, _burn_in_warnings(horizon, burn_in))


def estimate_occupation(q: CTMCApprox, x0: int, T: float = DEFAULT_T, n_traj: int = DEFAULT_NTRAJ,
                        seed: int = 42, burn_in: float = DEFAULT_BURN_IN) -> OccupationEstimate:
    """Streaming version of :func:`occupation_measure` (paths are never stored).

    Trajectory ``r`` uses the stream ``(seed, r)``, the same as
    ``simulate(q, x0, T, seed, index=r)``.
    """
    if not T > burn_in >= 0:
        raise ValueError("need T > burn_in >= 0")
    per, events = _occupation_kernel(q.indptr, q.targets, q.cumprob, q.exit_rate, int(x0), float(T),
                                     float(burn_in), int(seed), 0, int(n_traj))
    return _estimate(q, per, T, burn_in, _burn_in_warnings(T, burn_in), int(events))


def exact_occupation(q: CTMCApprox) -> OccupationEstimate:
    """The estimator's infinite-horizon limit, from the exact stationary law (zero standard errors)."""
    pi = stationary_distribution(q)
    return _from_fractions(q, pi, np.zeros_like(pi), np.inf, 0.0, 0, [])


# ---------------------------------------------------------------------------
# discounted costs


def state_costs(q: CTMCApprox, running: EdgeField | None, theta: Mapping[int, float] | None) -> Array:
    """Per-state running cost: ``running`` on nodes, a blend at vertex states.

    A vertex state stands for the vertex (weight ``eta_v``, cost ``theta_v``)
    plus its adjacent half cells (weight ``c_v``, the average edge cost).
    """
    net = q.net
    run = running if running is not None else EdgeField.zeros(net)
    th = {v: net.vertices[v].theta for v in net.interior_vertices} if theta is None else theta
    cost = np.zeros(q.n_states)
    for a in range(net.n_edges):
        idx = q.node_state[a]
        cost[idx[1:-1]] = run[a][1:-1]
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        gsum = sum(vert.gamma[i.edge] * net.edges[i.edge].h for i in incs)
        edge_avg = sum(vert.gamma[i.edge] * net.edges[i.edge].h * run.endpoint(i) for i in incs) / gsum
        c = q.half_cell[v]
        eta = vert.eta
        cost[v] = (eta * th.get(v, 0.0) + c * edge_avg) / (eta + c)
    return cost


def discounted_cost(q: CTMCApprox, x0: int, lam: float, F: EdgeField | None, ell: EdgeField | None,
                    theta: Mapping[int, float] | None, n_traj: int, T_eff: float, seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``int_0^T e^{-lam s} c(X_s) ds``.

    ``c`` is ``F + ell`` on edge nodes and ``theta`` at vertices (see
    :func:`state_costs`).  The time integral is exact along each path.
    """
    if not lam > 0:
        raise ValueError("lam must be > 0")
    if T_eff <= 0:
        return 0.0, 0.0
    running = None
    if F is not None or ell is not None:
        running = (F if F is not None else EdgeField.zeros(q.net)) + (ell if ell is not None else 0.0)
    cost = state_costs(q, running, theta)
    vals = _discounted_kernel(q.indptr, q.targets, q.cumprob, q.exit_rate, cost, int(x0), float(lam),
                              float(T_eff), int(seed), int(n_traj))
    se = float(vals.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
    return float(vals.mean()), se


# ---------------------------------------------------------------------------
# occupation / local-time identity


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: ``values[i]`` on ``[breaks[i], breaks[i+1])``, last value after."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def integrate(self, a: Array, b: Array) -> Array:
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        edges = np.append(np.asarray(self.breaks, float), np.inf)
        total = np.zeros(np.broadcast(a, b).shape)
        for i, val in enumerate(self.values):
            lo = np.maximum(a, edges[i])
            hi = np.minimum(b, edges[i + 1])
            total += val * np.maximum(hi - lo, 0.0)
        return total


@dataclass(frozen=True)
class ExponentialWeight:
    """``g(s) = exp(-lam s)``."""

    lam: float

    def integrate(self, a: Array, b: Array) -> Array:
        return (np.exp(-self.lam * np.asarray(a, float)) - np.exp(-self.lam * np.asarray(b, float))) / self.lam


def occupation_local_time_identity(traj: Trajectory, v: int, g: StepFunction | ExponentialWeight, eta: float
                                   ) -> tuple[float, float, float]:
    """Both sides of ``int g 1_{X=v} ds = eta int g dL`` along a chain path.

    The local time ``L`` at ``v`` is accumulated interval by interval as
    occupation time over ``eta``; returns ``(lhs, rhs, L(T))``.
    """
    if not eta > 0:
        raise ValueError("eta must be > 0 (the identity degenerates for non-sticky vertices)")
    start, end, st = traj.holding_intervals()
    mask = st == v
    a, b = start[mask], end[mask]
    lhs = float(np.sum(g.integrate(a, b)))
    dur = b - a
    dL = dur / eta
    keep = dur > 0
    g_avg = np.zeros_like(dur)
    g_avg[keep] = g.integrate(a[keep], b[keep]) / dur[keep]
    rhs = float(eta * np.sum(g_avg * dL))
    return lhs, rhs, float(np.sum(dL))


# ---------------------------------------------------------------------------
# verification of the HJB solution by simulation


@dataclass(frozen=True)
class VerificationResult:
    u_pde: float
    J_mc: float
    stderr: float
    x0_state: int
    h: float


def controlled_chain(u: EdgeField, H, net: Network, h_target: float,
                     perturb: Callable[[int, Array], Array] | None = None):
    """Chain driven by the feedback control ``a*(x, u'(x))`` (plus ``perturb``), with its running cost.

    ``u`` must live on the chain grid (solve the HJB problem on ``ctmc_grid(net, h)``).
    Returns ``(chain, running_cost_field)``.
    """
    from .network import derivative

    du = derivative(u, net)
    ctrl = []
    for a, e in enumerate(net.edges):
        act = H.optimal_control(a, e.grid(), du[a])
        if act is None:
            raise ValueError("Hamiltonian has no optimal control (use a control-derived model)")
        if perturb is not None:
            act = np.clip(act + perturb(a, e.grid()), -H.ctrl.bound, H.ctrl.bound)
        ctrl.append(act)
    drift = EdgeField(tuple(H.controlled_drift(a, e.grid(), ctrl[a]) for a, e in enumerate(net.edges)))
    ell = EdgeField(tuple(H.running_cost(a, e.grid(), ctrl[a]) for a, e in enumerate(net.edges)))
    return build_ctmc(drift, net, None), ell


def verify_hjb(net: Network, lam: float, F: EdgeField | Callable[[int, Array], Array], theta: Mapping[int, float] | None,
               H, x0: tuple[int, float] | int, h: float, n_traj: int, T_eff: float, seed: int,
               perturb: Callable[[int, Array], Array] | None = None) -> VerificationResult:
    """Compare the discounted HJB value ``u(x0)`` with the simulated cost of the feedback control.

    ``x0`` is a vertex index or ``(edge, arclength)``; ``F`` is an EdgeField on
    ``net`` (resampled to the chain grid) or a callable ``F(alpha, s)``.
    With ``perturb`` the control is suboptimal and ``J`` should exceed ``u``.
    """
    from .hjb import solve_discounted

    qnet = ctmc_grid(net, h)
    Fq = EdgeField.from_function(qnet, F) if callable(F) else resample(F, net, qnet)
    sol = solve_discounted(lam, Fq, theta, H, qnet)
    chain, ell = controlled_chain(sol.u, H, qnet, h, perturb)
    if isinstance(x0, tuple):
        state = chain.state_of(x0[0], x0[1])
    else:
        state = int(x0)
    if state < qnet.n_vertices:
        inc = qnet.incidence[state][0]
        u0 = sol.u.endpoint(inc)
    else:
        a = int(chain.state_edge[state])
        j = int(np.flatnonzero(chain.node_state[a] == state)[0])
        u0 = float(sol.u[a][j])
    J, se = discounted_cost(chain, state, lam, Fq, ell, theta, n_traj, T_eff, seed)
    return VerificationResult(float(u0), J, se, state, max(e.h for e in qnet.edges))
