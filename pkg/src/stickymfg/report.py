from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class SolveReport:
    """Convergence record attached to every solver result.

    ``wall_time`` is kept out of :meth:`to_dict` so emitted files stay
    byte-identical across runs.
    """

    solver: str
    iterations: int = 0
    converged: bool = False
    residual_history: list[float] = field(default_factory=list)
    achieved: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def to_dict(self) -> dict[str, Any]:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_history": [float(r) for r in self.residual_history],
            "achieved": {k: float(v) for k, v in sorted(self.achieved.items())},
            "warnings": list(self.warnings),
            "extra": _jsonable(self.extra),
        }


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            return obj.item()
        except (ValueError, TypeError):
            return obj.tolist()
    return obj
