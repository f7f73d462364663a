"""CSV/JSON persistence for plans, potentials, partitions, maps and class dumps."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .kantorovich import Potential, TransportPlan
from .measures import DiscreteMeasure
from .partition import DirectedPartition, PartitionCell
from .polynorm import PolyhedralNorm


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return [r for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# plans and potentials


def save_plan(plan: TransportPlan, cost, path) -> Path:
    C = cost.matrix(plan.mu.points[plan.rows], plan.nu.points[plan.cols]) if len(plan.rows) else np.zeros((0, 0))
    rows = [(i, j, m, float(C[k, k])) for k, (i, j, m) in enumerate(plan.entries)]
    return write_csv(path, ["i", "j", "mass", "cost"], rows)


def load_plan(path, mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> TransportPlan:
    recs = read_csv(path)
    try:
        rows = np.array([int(r["i"]) for r in recs], dtype=int)
        cols = np.array([int(r["j"]) for r in recs], dtype=int)
        mass = np.array([float(r["mass"]) for r in recs])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"bad plan file {path}: {exc}") from exc
    if len(rows) and (rows.max() >= len(mu) or cols.max() >= len(nu) or min(rows.min(), cols.min()) < 0):
        raise InvalidInputError("plan indices out of range")
    plan = TransportPlan(mu, nu, rows, cols, mass, 0.0)
    plan.cost_value = plan.evaluate(cost)
    return plan


def save_potential(P: Potential, path) -> Path:
    return write_csv(path, ["point_id", "psi"], [(k, float(v)) for k, v in enumerate(P.psi)])


def load_carriage(path) -> list:
    recs = read_csv(path)
    try:
        return sorted({(int(r["i"]), int(r["j"])) for r in recs})
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"bad carriage file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# partitions


def partition_from_records(records, norm: PolyhedralNorm, points) -> DirectedPartition:
    """Rebuild a partition from its JSON records (classifications are not stored)."""
    points = np.asarray(points, float)
    cells = []
    for rec in records:
        try:
            cone = norm.cone(tuple(rec["cone_active_set"]))
            basis = np.asarray(rec["basis"]["vectors"], float).reshape(-1, norm.dim)
            pairs = [(int(i), int(j)) for i, j in rec["pairs"]] if "pairs" in rec else None
            cells.append(PartitionCell(int(rec["id"]), int(rec["k"]), cone, [int(m) for m in rec["members"]],
                                       np.asarray(rec["basis"]["base_point"], float), basis,
                                       frozenset(rec.get("flags", [])), pairs, float(rec.get("share", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad partition record: {exc}") from exc
    cells.sort(key=lambda c: c.id)
    if [c.id for c in cells] != list(range(len(cells))):
        raise InvalidInputError("partition cell ids must be 0..n-1")
    return DirectedPartition(cells, len(points), norm, [], points)


def load_partition(path, norm: PolyhedralNorm, points) -> DirectedPartition:
    return partition_from_records(read_json(path), norm, points)


def save_partition(part: DirectedPartition, path) -> Path:
    return write_json(path, [c.to_dict() for c in part.cells])


# ---------------------------------------------------------------------------
# maps


def save_map(result, map_path, residual_path) -> tuple:
    a = write_csv(map_path, ["source_id", "target_id"],
                  [(i, int(t)) for i, t in enumerate(result.table.tolist()) if t >= 0])
    rows = [(i, j, w) for i, tg in result.residual for j, w in tg]
    b = write_csv(residual_path, ["source_id", "target_id", "mass"], rows)
    return a, b
