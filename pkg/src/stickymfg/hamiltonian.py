"""Hamiltonians ``H_alpha(x, p)`` and their construction from a bounded control model.

All evaluators are vectorized in ``(x, p)``; ``alpha`` is the edge index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]


class HamiltonianModel:
    """Base class.  Subclasses implement :meth:`eval` and :meth:`grad`.

    ``growth = (C_H, q)`` are the constants of the power-growth assumption;
    ``optimal_control`` returns ``None`` when the model is not control-derived.
    """

    name = "hamiltonian"
    growth: tuple[float, float] = (1.0, 2.0)

    def eval(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        raise NotImplementedError

    def grad(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        raise NotImplementedError

    def optimal_control(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array | None:
        return None

    def process_drift(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        """Drift of the optimally controlled process, ``-dH/dp``."""
        return -self.grad(alpha, x, p)


class QuadraticHamiltonian(HamiltonianModel):
    """``H(x, p) = p^2 / 2``, the unconstrained ``b = a``, ``l = a^2/2`` model."""

    name = "quadratic"
    growth = (2.0, 2.0)

    def eval(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        p = np.asarray(p, dtype=float)
        return 0.5 * p * p

    def grad(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        return np.array(p, dtype=float)

    def optimal_control(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        return -np.asarray(p, dtype=float)


class FunctionHamiltonian(HamiltonianModel):
    """Wrap plain callables ``h(alpha, x, p)`` and ``dh(alpha, x, p)``."""

    def __init__(
        self,
        h: Callable[[int, Array, Array], ArrayLike],
        dh: Callable[[int, Array, Array], ArrayLike],
        growth: tuple[float, float] = (1.0, 2.0),
        name: str = "function",
    ):
        self._h, self._dh = h, dh
        self.growth = growth
        self.name = name

    def eval(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        return np.broadcast_to(np.asarray(self._h(alpha, x, p), float), p.shape).copy()

    def grad(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        return np.broadcast_to(np.asarray(self._dh(alpha, x, p), float), p.shape).copy()


def zero_hamiltonian() -> FunctionHamiltonian:
    """``H = 0``: the degenerate control model (no drift, no running cost)."""
    return FunctionHamiltonian(lambda a, x, p: 0.0 * p, lambda a, x, p: 0.0 * p, (1.0, 2.0), "zero")


# ---------------------------------------------------------------------------
# control models


@dataclass(frozen=True)
class ControlModel:
    """Controlled drift ``b(alpha, x, a)`` and running cost ``l(alpha, x, a)`` with ``|a| <= R``.

    ``quadratic`` marks the model ``b = a``, ``l = a^2/2`` for which the
    supremum is known in closed form.
    """

    drift: Callable[[int, Array, Array], ArrayLike]
    cost: Callable[[int, Array, Array], ArrayLike]
    bound: float
    quadratic: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def quadratic_model(cls, bound: float) -> ControlModel:
        return cls(lambda a, x, c: c, lambda a, x, c: 0.5 * c * c, float(bound), True,
                   {"R": float(bound), "drift_coeff": [0.0, 1.0], "cost_coeff": [0.0, 0.0, 0.5]})

    @classmethod
    def polynomial(cls, bound: float, drift_coeff: list[float], cost_coeff: list[float]) -> ControlModel:
        """``b = c0 + c1 a`` and ``l = k0 + k1 a + k2 a^2`` (the JSON control-model format)."""
        c0, c1 = (list(drift_coeff) + [0.0, 0.0])[:2]
        k0, k1, k2 = (list(cost_coeff) + [0.0, 0.0, 0.0])[:3]
        quad = (c0, c1, k0, k1, k2) == (0.0, 1.0, 0.0, 0.0, 0.5)
        return cls(
            lambda a, x, c: c0 + c1 * c,
            lambda a, x, c: k0 + k1 * c + k2 * c * c,
            float(bound),
            quad,
            {"R": float(bound), "drift_coeff": [c0, c1], "cost_coeff": [k0, k1, k2]},
        )


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
FLAT_TOL = 1e-10


class ControlHamiltonian(HamiltonianModel):
    """``H(x, p) = sup_{|a| <= R} -b(x, a) p - l(x, a)`` with the maximizer kept.

    Generic models use a grid scan on ``[-R, R]`` followed by golden-section
    refinement of the best bracket.  When a grid sample more than one step
    away from the refined maximizer also attains the supremum within
    ``FLAT_TOL``, the smallest maximizer is kept and ``h4_violations`` is
    incremented.
    """

    def __init__(self, ctrl: ControlModel, n_samples: int = 201, golden_iters: int = 80):
        if not ctrl.bound > 0:
            raise ValueError("control bound R must be > 0")
        self.ctrl = ctrl
        self.n_samples = max(int(n_samples), 3)
        self.golden_iters = golden_iters
        self.h4_violations = 0
        self.name = "control"
        self.growth = (max(2.0, 2.0 * ctrl.bound + 1.0), 2.0)

    def _objective(self, alpha: int, x: Array, p: Array, a: Array) -> Array:
        b = np.asarray(self.ctrl.drift(alpha, x, a), float)
        ell = np.asarray(self.ctrl.cost(alpha, x, a), float)
        return -b * p - ell

    def optimal_control(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        R = self.ctrl.bound
        if self.ctrl.quadratic:
            return np.clip(-p, -R, R)
        shape = p.shape
        xf, pf = x.ravel(), p.ravel()
        grid = np.linspace(-R, R, self.n_samples)
        vals = self._objective(alpha, xf[:, None], pf[:, None], grid[None, :])
        best = np.argmax(vals, axis=1)  # first index: smallest maximizer
        step = grid[1] - grid[0]
        lo = np.maximum(grid[best] - step, -R)
        hi = np.minimum(grid[best] + step, R)
        a = self._golden(alpha, xf, pf, lo, hi)
        top = self._objective(alpha, xf, pf, a)
        # a maximum is flat when samples away from the refined maximizer also attain it
        far = np.abs(grid[None, :] - a[:, None]) > 1.5 * step
        flat = np.any(far & (vals >= top[:, None] - FLAT_TOL), axis=1)
        if np.any(flat):
            self.h4_violations += int(np.count_nonzero(flat))
        a = np.where(flat, grid[best], a)
        return a.reshape(shape)

    def _golden(self, alpha: int, x: Array, p: Array, lo: Array, hi: Array) -> Array:
        lo, hi = lo.copy(), hi.copy()
        c = hi - _GOLDEN * (hi - lo)
        d = lo + _GOLDEN * (hi - lo)
        fc = self._objective(alpha, x, p, c)
        fd = self._objective(alpha, x, p, d)
        for _ in range(self.golden_iters):
            left = fc >= fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            d_new = np.where(left, c, lo + _GOLDEN * (hi - lo))
            c_new = np.where(left, hi - _GOLDEN * (hi - lo), d)
            f_new = self._objective(alpha, x, p, np.where(left, c_new, d_new))
            fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
            c, d = c_new, d_new
        cand = np.stack([lo, hi, 0.5 * (lo + hi)])
        fv = self._objective(alpha, x[None, :], p[None, :], cand)
        return cand[np.argmax(fv, axis=0), np.arange(len(p))]

    def eval(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        if self.ctrl.quadratic:
            R = self.ctrl.bound
            ap = np.abs(p)
            return np.where(ap <= R, 0.5 * p * p, R * ap - 0.5 * R * R)
        a = self.optimal_control(alpha, x, p)
        return self._objective(alpha, x, p, a)

    def grad(self, alpha: int, x: ArrayLike, p: ArrayLike) -> Array:
        """Envelope theorem: ``dH/dp = -b(x, a*)``."""
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        a = self.optimal_control(alpha, x, p)
        return -np.broadcast_to(np.asarray(self.ctrl.drift(alpha, x, a), float), p.shape).copy()

    def running_cost(self, alpha: int, x: ArrayLike, a: ArrayLike) -> Array:
        x, a = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float))
        return np.broadcast_to(np.asarray(self.ctrl.cost(alpha, x, a), float), a.shape).copy()

    def controlled_drift(self, alpha: int, x: ArrayLike, a: ArrayLike) -> Array:
        x, a = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float))
        return np.broadcast_to(np.asarray(self.ctrl.drift(alpha, x, a), float), a.shape).copy()


def hamiltonian_from_control(ctrl: ControlModel, n_samples: int = 201) -> ControlHamiltonian:
    return ControlHamiltonian(ctrl, n_samples)


# ---------------------------------------------------------------------------
# sampled checks


def check_growth(H: HamiltonianModel, n_edges: int = 1, p_max: float = 10.0, n: int = 201,
                 x_max: float = 1.0) -> dict[str, float]:
    """Largest sampled excess over each growth bound, scaled by ``1 + |p|^q``.

    A Hamiltonian satisfies the bounds on the sampled box when every entry
    is ``<= 0``.
    """
    C, q = H.growth
    p = np.linspace(-p_max, p_max, n)
    scale = 1.0 + np.abs(p) ** q
    worst = {"upper": -np.inf, "grad": -np.inf, "coercive": -np.inf}
    for a in range(n_edges):
        for x in np.linspace(0.0, x_max, 5):
            h = H.eval(a, x, p)
            dh = H.grad(a, x, p)
            checks = {
                "upper": np.abs(h) - C * scale,
                "grad": np.abs(dh) - C * (1.0 + np.abs(p) ** (q - 1.0)),
                "coercive": np.abs(p) ** q / C - C - h,
            }
            for k, v in checks.items():
                worst[k] = max(worst[k], float(np.max(v / scale)))
    return worst


def check_gradient(H: HamiltonianModel, alpha: int, x: ArrayLike, p: ArrayLike, eps: float = 1e-6) -> float:
    """Largest relative gap between ``grad`` and a central difference of ``eval``."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    fd = (H.eval(alpha, x, p + eps) - H.eval(alpha, x, p - eps)) / (2 * eps)
    g = H.grad(alpha, x, p)
    return float(np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g))))
