"""CSV/JSON serialization of networks, fields, measures and reports.

Fields are written as ``edge_id,s,value`` rows with 17 significant digits,
which round-trips IEEE doubles exactly.  JSON output uses sorted keys, LF
line endings and a trailing newline so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .network import EdgeField, GraphMeasure, Network, build_network

FMT = "{:.17g}"


def _num(x: float) -> str:
    return FMT.format(float(x))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(obj))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_network(path: str | Path) -> Network:
    return build_network(read_json(path))


# ---------------------------------------------------------------------------
# fields


def write_field_csv(path: str | Path, f: EdgeField, net: Network,
                    extra: Mapping[str, EdgeField] | None = None) -> Path:
    """``edge_id,s,value`` (plus one column per ``extra`` field) for every grid node."""
    path = Path(path)
    extra = dict(extra or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edge_id", "s", "value", *extra.keys()])
            for a, e in enumerate(net.edges):
                s = e.grid()
                for j in range(e.n_points):
                    w.writerow([e.id, _num(s[j]), _num(f[a][j]), *(_num(x[a][j]) for x in extra.values())])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_field_csv(path: str | Path, net: Network, column: str = "value") -> EdgeField:
    """Inverse of :func:`write_field_csv`; the grid must match ``net`` node for node."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    per_edge: dict[str, list[tuple[float, float]]] = {e.id: [] for e in net.edges}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"edge_id", "s", column} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns edge_id,s,{column}")
        for row in reader:
            eid = row["edge_id"]
            if eid not in per_edge:
                raise ConfigError(f"{path}: unknown edge {eid!r}")
            per_edge[eid].append((float(row["s"]), float(row[column])))
    out = []
    for e in net.edges:
        rows = sorted(per_edge[e.id])
        if len(rows) != e.n_points:
            raise ConfigError(f"{path}: edge {e.id!r} has {len(rows)} samples, network grid has {e.n_points}")
        s = np.array([r[0] for r in rows])
        if np.max(np.abs(s - e.grid())) > 1e-9 * max(1.0, e.length):
            raise ConfigError(f"{path}: edge {e.id!r} arclengths do not match the network grid")
        out.append(np.array([r[1] for r in rows]))
    return EdgeField(tuple(out))


def atoms_by_id(atoms: Mapping[int, float], net: Network) -> dict[str, float]:
    return {net.vertices[v].id: float(a) for v, a in atoms.items()}


def write_measure(csv_path: str | Path, atoms_path: str | Path, measure: GraphMeasure, net: Network) -> None:
    write_field_csv(csv_path, measure.density, net)
    write_json(atoms_path, atoms_by_id(measure.atoms, net))


def read_measure(csv_path: str | Path, atoms_path: str | Path, net: Network) -> GraphMeasure:
    dens = read_field_csv(csv_path, net)
    raw = read_json(atoms_path)
    atoms = {}
    for vid, val in raw.items():
        try:
            atoms[net.vertex_index(vid)] = float(val)
        except KeyError as exc:
            raise ConfigError(f"{atoms_path}: unknown vertex {vid!r}") from exc
    return GraphMeasure(dens, atoms)


def write_history_csv(path: str | Path, history: list[Mapping[str, float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "gap", "rho"])
        for h in history:
            w.writerow([int(h["iteration"]), _num(h["gap"]), _num(h["rho"])])
    return path
