"""Command-line driver: solve | decompose | cycles | map | diag | pipeline | example-2ndmarg."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io as pio
from .cycles import signatures_for_carriage
from .diagnostics import disintegration_density, flagged_mass
from .errors import EmptyMeasureError, InfeasibleError, InvalidInputError, PolyotError
from .fixtures import chain3, shift_instance
from .kantorovich import (
    ConeCost,
    NormCost,
    RestrictedCost,
    _check_feasible,
    check_cyclical_monotonicity,
    duality_gap,
    extract_potentials,
    solve_primal,
)
from .measures import DiscreteMeasure, grid_sample, load_measure, shift_measure
from .monge import assemble_map, secondary_select, verify_pushforward
from .partition import FINAL, INITIAL, check_partition, classify_all, build_partition, superdifferential_graph
from .polynorm import Cone, PolyhedralNorm, load_norm
from .sheaves import decompose_sheaves, verify_sheaf

log = logging.getLogger("polyot")

OUTPUT_ROOT_ENV = "POLYOT_OUTPUT_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2
VALIDATION_ERRORS = (InvalidInputError, EmptyMeasureError, InfeasibleError, FileNotFoundError,
                     json.JSONDecodeError, ValueError)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    norm: str = "l1"
    mu: object = None  # path, or {"grid": "dxN", "box": ..., "density": ..., "shift": ...}
    nu: object = None
    active_tol: float = 1e-9
    duality_tol: float = 1e-9
    affine_tol: float = 1e-8
    cycle_budget: int = 8
    rounds: int = 3
    out_dir: str = "run"
    seed: int = 0
    example: str | None = None  # "2ndmarg" runs the second-marginal fixture
    fixture: str | None = None  # "chain3" | "shift"

    def __post_init__(self):
        for name in ("active_tol", "duality_tol", "affine_tol"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.rounds < 0 or self.cycle_budget < 1:
            raise InvalidInputError("rounds must be >= 0 and cycle_budget >= 1")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ImportError:
                try:
                    import tomli as tomllib
                except ImportError:
                    raise InvalidInputError("TOML configs need Python >= 3.11 or the tomli package") from None
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _out_path(p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else output_root() / p


def measure_from_spec(spec, base: Path | None = None) -> DiscreteMeasure:
    """A measure from a file path or a grid description."""
    if isinstance(spec, dict):
        d, n = (int(v) for v in str(spec.get("grid", "2x8")).lower().split("x"))
        box = spec.get("box", [[0.0, 1.0]] * d)
        m = grid_sample(spec.get("density", "uniform"), box, n)
        if "shift" in spec:
            m = shift_measure(m, spec["shift"])
        return m
    if isinstance(spec, str) and spec.startswith("grid:"):
        return measure_from_spec({"grid": spec[5:]})
    p = Path(spec)
    if base is not None and not p.is_absolute() and not p.exists():
        p = base / p
    return load_measure(p)


# ---------------------------------------------------------------------------
# the second-marginal fixture


def _ex2_fixture(n: int, y_range=(0.0, 0.5)):
    ys = (np.arange(n) + 0.5) / n * 0.5
    yt = y_range[0] + (np.arange(n) + 0.5) / n * (y_range[1] - y_range[0])
    X1 = np.column_stack([-np.ones(n), ys, np.zeros(n)])
    X2 = np.column_stack([np.ones(n), ys, np.zeros(n)])
    Y = np.column_stack([np.zeros(n), yt, np.ones(n)])
    # cones {(a, b, a): |b| <= a} and {(a, b, -a): |b| <= -a}
    C1 = Cone(np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 1.0]]))
    C2 = Cone(np.array([[-1.0, 1.0, 1.0], [-1.0, -1.0, 1.0]]))
    return X1, X2, Y, C1, C2


def _split_feasible(X, Y, target_w, cone) -> tuple[bool, str]:
    """Whether the uniform measure on ``X`` can reach ``target_w`` on ``Y`` with finite cone cost."""
    tot = float(np.sum(target_w))
    if abs(tot - 1.0) > 1e-9:
        return False, f"mass mismatch: cell carries 1 but the split assigns {tot:.6g}"
    keep = np.asarray(target_w) > 0
    mu = DiscreteMeasure.uniform(X)
    nu = DiscreteMeasure(Y[keep], np.asarray(target_w)[keep])
    finite = np.isfinite(ConeCost(cone).matrix(mu.points, nu.points))
    try:
        _check_feasible(mu, nu, finite)
    except InfeasibleError as exc:
        return False, str(exc)
    return True, "feasible"


def run_example_2ndmarg(n: int = 8) -> dict:
    """Check several splits of the target between the two directed cells of the fixture.

    Each cell carries half of the source mass; a split lists, per cell, the
    fraction of every target atom sent through it (fractions normalized to
    the cell mass).
    """
    X1, X2, Y, C1, C2 = _ex2_fixture(n)
    nu = np.full(n, 1.0 / n)  # target atoms, total mass 1
    half = nu / 2
    lower = np.where(np.arange(n) < n // 2, nu, 0.0)
    splits = {
        "equal": (half, half),
        "lower/upper": (lower, nu - lower),
        "all-through-first": (nu, np.zeros(n)),
    }
    report = {"n": n, "splits": []}
    for name, (v1, v2) in splits.items():
        ok1, why1 = _split_feasible(X1, Y, 2 * v1, C1)
        ok2, why2 = _split_feasible(X2, Y, 2 * v2, C2)
        report["splits"].append({"name": name, "nu1": (2 * v1).tolist(), "nu2": (2 * v2).tolist(),
                                 "feasible": ok1 and ok2, "cost": 0.0 if ok1 and ok2 else None,
                                 "reason": "; ".join(r for r in (why1, why2) if r != "feasible") or "feasible"})
    # stretched targets: a split concentrating the first cell outside its cone shadow
    X1s, _, Ys, C1s, _ = _ex2_fixture(n, y_range=(0.0, 3.0))
    far = np.where(Ys[:, 1] > 2.0, 1.0, 0.0)
    ok, why = _split_feasible(X1s, Ys, far / far.sum(), C1s)
    report["stretched_unreachable"] = {"feasible": ok, "reason": why}
    feas = [s for s in report["splits"] if s["feasible"]]
    distinct = {tuple(np.round(s["nu1"], 12)) for s in feas}
    report["feasible_splits"] = len(feas)
    report["distinct_feasible_marginals"] = len(distinct)
    report["multiple_admissible"] = len(distinct) >= 2
    return report


# ---------------------------------------------------------------------------
# pipeline


def _rel(path, root) -> str:
    return str(Path(path).relative_to(root))


def _stage(manifest, name, fn):
    try:
        out = fn()
        manifest["stages"][name] = "ok"
        return out
    except PolyotError as exc:
        manifest["stages"][name] = f"error: {type(exc).__name__}: {exc}"
        manifest["errors"].append({"stage": name, "type": type(exc).__name__, "message": str(exc)})
        return None


def _fixture(name):
    if name == "chain3":
        return chain3()
    if name == "shift":
        return shift_instance(8)
    raise InvalidInputError(f"unknown fixture {name!r}")


def run_pipeline(cfg: PipelineConfig, base: Path | None = None) -> dict:
    """Run solve -> decompose -> cycles -> map -> diag and persist every stage."""
    out = _out_path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": asdict(cfg), "artifacts": {}, "verdicts": {}, "stages": {}, "errors": [], "flags": []}
    art = manifest["artifacts"]
    if cfg.example == "2ndmarg":
        rep = run_example_2ndmarg()
        art["example_2ndmarg"] = _rel(pio.write_json(out / "example_2ndmarg.json", rep), out)
        manifest["verdicts"]["multiple_admissible"] = rep["multiple_admissible"]
        if rep["multiple_admissible"]:
            manifest["flags"].append("multiple admissible second-marginal decompositions")
        pio.write_json(out / "manifest.json", manifest)
        return manifest

    if cfg.fixture:
        mu, nu, norm = _fixture(cfg.fixture)
    else:
        mu, nu = measure_from_spec(cfg.mu, base), measure_from_spec(cfg.nu, base)
        norm = load_norm(cfg.norm, mu.dim)
    cost = NormCost(norm)
    pio.write_json(out / "norm.json", norm.to_dict())
    V = manifest["verdicts"]

    sp = _stage(manifest, "solve", lambda: secondary_select(mu, nu, cost))
    if sp is None:
        pio.write_json(out / "manifest.json", manifest)
        return manifest
    plan = sp.plan
    art["plan"] = _rel(pio.save_plan(plan, cost, out / "plan.csv"), out)
    P = _stage(manifest, "potentials", lambda: extract_potentials(plan, cost, central=True))
    if P is not None:
        art["potentials"] = _rel(pio.save_potential(P, out / "potentials.csv"), out)
        gap = duality_gap(plan, P)
        V["duality_gap"] = abs(gap) <= cfg.duality_tol * max(1.0, plan.cost_value)
    mono = check_cyclical_monotonicity(plan.carriage(), mu.points, nu.points, cost, seed=cfg.seed)
    V["cyclical_monotonicity"] = mono.passed

    def decompose():
        ds = superdifferential_graph(plan, P, cfg.duality_tol)
        cls = classify_all(ds, norm, cfg.active_tol)
        part = build_partition(cls, mu.points, norm, None, cfg.affine_tol)
        check_partition(part, plan)
        return part

    part = _stage(manifest, "decompose", decompose) if P is not None else None
    if part is not None:
        art["partition"] = _rel(pio.save_partition(part, out / "partition.json"), out)
        V["partition_cones"] = True
        n_split = len({c.members[0] for c in part.cells if c.pairs is not None})
        if n_split:
            manifest["flags"].append(f"{n_split} atoms split across faces")
        groups = _stage(manifest, "sheaves", lambda: decompose_sheaves(part))
        if groups is not None:
            art["sheaves"] = _rel(pio.write_json(out / "sheaves.json", [g.to_dict() for g in groups]), out)
            V["sheaves"] = all(verify_sheaf(g, part)["ok"] for g in groups)

        def cycles():
            recs = []
            carriage = list(plan.carriage())
            owner = part.pair_cells([i for i, _ in carriage], [j for _, j in carriage])
            for c in part.cells:
                pairs = [pr for pr, o in zip(carriage, owner) if o == c.id]
                if not pairs:
                    continue
                sig = signatures_for_carriage(pairs, mu.points, nu.points, c.cone, tol=cfg.active_tol)
                recs += [dict(r, cell=c.id) for r in sig.to_records()]
            return recs

        recs = _stage(manifest, "cycles", cycles)
        if recs is not None:
            art["classes"] = _rel(pio.write_json(out / "classes.json", recs), out)
            V["signature_compatibility"] = True

        res = _stage(manifest, "map", lambda: assemble_map(part, plan, cfg.rounds))
        if res is not None:
            a, b = pio.save_map(res, out / "map.csv", out / "residual.csv")
            art["map"], art["residual"] = _rel(a, out), _rel(b, out)
            V["map_total"] = res.is_map
            if res.is_map:
                V["pushforward"] = verify_pushforward(res.table, mu, nu).passed
            V["map_cost_matches"] = abs(res.cost_value - plan.cost_value) <= 1e-9 * max(1.0, plan.cost_value)

        def diag():
            dens = disintegration_density(part, mu.weights)
            return {"initial_final_fraction": flagged_mass(part, mu.weights),
                    "kinds": part.by_kind(), "mass_by_dim": part.mass_by_dim(mu.weights),
                    "regular_like": dens["regular_like"],
                    "profiles": [{"cell": p.cell_id, "axis": p.axis_coord.tolist(), "density": p.density.tolist()}
                                 for p in dens["profiles"]]}

        rep = _stage(manifest, "diag", diag)
        if rep is not None:
            art["diagnostics"] = _rel(pio.write_json(out / "diagnostics.json", rep), out)
    manifest["summary"] = {"primary_cost": plan.cost_value, "secondary_cost": sp.secondary_cost_value,
                           "n_sources": len(mu), "n_targets": len(nu)}
    pio.write_json(out / "manifest.json", manifest)
    return manifest


def emit_plot_data(manifest, out_dir, root=None) -> dict:
    """Tidy CSV series for plotting: partition points, rays and density profiles.

    ``manifest`` is a manifest dict (artifact paths relative to ``root``) or
    the path of a manifest file (``root`` defaults to its directory).
    """
    if not isinstance(manifest, dict):
        root = Path(manifest).parent if root is None else root
        manifest = pio.read_json(manifest)
    root = Path("." if root is None else root)
    out = Path(out_dir)
    art = {k: str(root / v) for k, v in manifest.get("artifacts", {}).items()}
    bundle = {"files": {}, "warnings": []}
    cfg = manifest.get("config", {})
    try:
        if cfg.get("fixture"):
            mu, nu, _ = _fixture(cfg["fixture"])
        else:
            mu, nu = measure_from_spec(cfg.get("mu")), measure_from_spec(cfg.get("nu"))
    except Exception as exc:  # noqa: BLE001 - any failure leaves a partial bundle
        mu = nu = None
        bundle["warnings"].append(f"measures unavailable: {exc}")
    if "partition" in art and mu is not None and Path(art["partition"]).exists():
        recs = pio.read_json(art["partition"])
        rows = []
        for c in recs:
            for m in c["members"]:
                rows.append(list(mu.points[m]) + [c["id"], c["k"], "|".join(c["flags"])])
        hdr = [f"x{a}" for a in range(mu.dim)] + ["cell", "k", "flags"]
        bundle["files"]["partition_points"] = _rel(pio.write_csv(out / "partition_points.csv", hdr, rows), out)
    else:
        bundle["warnings"].append("partition artifact missing")
    if "plan" in art and mu is not None and Path(art["plan"]).exists():
        rows = []
        for r in pio.read_csv(art["plan"]):
            i, j = int(r["i"]), int(r["j"])
            rows.append(list(mu.points[i]) + list(nu.points[j]) + [float(r["mass"])])
        hdr = [f"x{a}" for a in range(mu.dim)] + [f"y{a}" for a in range(mu.dim)] + ["mass"]
        bundle["files"]["rays"] = _rel(pio.write_csv(out / "rays.csv", hdr, rows), out)
    else:
        bundle["warnings"].append("plan artifact missing")
    if "diagnostics" in art and Path(art["diagnostics"]).exists():
        rep = pio.read_json(art["diagnostics"])
        rows = [(p["cell"], a, d) for p in rep.get("profiles", []) for a, d in zip(p["axis"], p["density"])]
        bundle["files"]["density"] = _rel(pio.write_csv(out / "density.csv", ["cell", "axis", "density"], rows), out)
    else:
        bundle["warnings"].append("diagnostics artifact missing")
    if "example_2ndmarg" in art and Path(art["example_2ndmarg"]).exists():
        rep = pio.read_json(art["example_2ndmarg"])
        rows = [(s["name"], s["feasible"], s["reason"]) for s in rep["splits"]]
        bundle["files"]["splits"] = _rel(pio.write_csv(out / "splits.csv", ["split", "feasible", "reason"], rows), out)
        bundle["warnings"] = [w for w in bundle["warnings"] if "missing" not in w and "unavailable" not in w]
    pio.write_json(out / "bundle.json", bundle)
    return bundle


# ---------------------------------------------------------------------------
# subcommands


def _load_pair(args):
    mu = measure_from_spec(args.mu)
    nu = measure_from_spec(args.nu)
    return mu, nu, load_norm(args.norm, mu.dim)


def _cone_arg(norm: PolyhedralNorm, text: str):
    return norm.cone(tuple(int(v) for v in text.split(",") if v.strip()))


def cmd_solve(args) -> int:
    mu, nu, norm = _load_pair(args)
    cost = NormCost(norm)
    if args.cone:
        cost = RestrictedCost(cost, _cone_arg(norm, args.cone))
    plan = solve_primal(mu, nu, cost)
    out = _out_path(args.out)
    pio.save_plan(plan, cost, out / "plan.csv")
    if not args.cone:
        P = extract_potentials(plan, cost, central=True)
        pio.save_potential(P, out / "potentials.csv")
    print(json.dumps({"cost": plan.cost_value, "pairs": len(plan.rows), "out": str(out)}))
    return EXIT_OK


def cmd_decompose(args) -> int:
    mu, nu, norm = _load_pair(args)
    cost = NormCost(norm)
    plan = pio.load_plan(args.plan, mu, nu, cost)
    P = extract_potentials(plan, cost, central=True)
    ds = superdifferential_graph(plan, P, args.tol)
    part = build_partition(classify_all(ds, norm, args.tol), mu.points, norm, plan)
    pio.save_partition(part, _out_path(args.out))
    print(json.dumps({"cells": len(part.cells), "kinds": part.by_kind()}))
    return EXIT_OK


def cmd_cycles(args) -> int:
    mu, nu, norm = _load_pair(args)
    pairs = pio.load_carriage(args.carriage)
    sig = signatures_for_carriage(pairs, mu.points, nu.points, _cone_arg(norm, args.cone), tol=args.tol)
    text = sig.to_json()
    if args.out:
        pio.write_json(_out_path(args.out), sig.to_records())
    print(text)
    return EXIT_OK


def cmd_map(args) -> int:
    mu, nu, norm = _load_pair(args)
    cost = NormCost(norm)
    sp = secondary_select(mu, nu, cost)
    P = extract_potentials(sp.plan, cost, central=True)
    ds = superdifferential_graph(sp.plan, P)
    part = build_partition(classify_all(ds, norm), mu.points, norm, sp.plan)
    res = assemble_map(part, sp.plan, args.rounds)
    out = _out_path(args.out)
    pio.save_map(res, out / "map.csv", out / "residual.csv")
    verdict = verify_pushforward(res.table, mu, nu) if res.is_map else None
    print(json.dumps({"is_map": res.is_map, "residual_atoms": len(res.residual), "cost": res.cost_value,
                      "pushforward": None if verdict is None else verdict.passed}))
    return EXIT_OK


def cmd_diag(args) -> int:
    mu = measure_from_spec(args.mu)
    norm = load_norm(args.norm, mu.dim)
    part = pio.load_partition(args.partition, norm, mu.points)
    dens = disintegration_density(part, mu.weights)
    flagged = {INITIAL: 0.0, FINAL: 0.0}
    for c in part.cells:
        for f in c.flags & set(flagged):
            flagged[f] += c.share * float(mu.weights[c.members].sum())
    rep = {"initial_final_fraction": flagged_mass(part, mu.weights), "by_flag": flagged,
           "mass_by_dim": part.mass_by_dim(mu.weights), "regular_like": dens["regular_like"]}
    pio.write_json(_out_path(args.report), rep)
    print(json.dumps(rep, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    if args.config:
        cfg = PipelineConfig.load(args.config)
        base = Path(args.config).resolve().parent
    else:
        cfg = PipelineConfig(norm=args.norm, mu=args.mu, nu=args.nu, fixture=args.fixture, example=args.example)
        base = None
    if args.out:
        cfg.out_dir = args.out
    manifest = run_pipeline(cfg, base)
    if args.plot_data:
        emit_plot_data(manifest, _out_path(cfg.out_dir) / "plot", _out_path(cfg.out_dir))
    print(json.dumps({"verdicts": manifest["verdicts"], "flags": manifest["flags"], "errors": manifest["errors"]},
                     sort_keys=True))
    if manifest["errors"]:
        return EXIT_INTERNAL
    return EXIT_OK if all(manifest["verdicts"].values()) else EXIT_VALIDATION


def cmd_example(args) -> int:
    rep = run_example_2ndmarg(args.n)
    if args.out:
        pio.write_json(_out_path(args.out), rep)
    print(json.dumps(rep, sort_keys=True, default=str))
    return EXIT_OK if rep["multiple_admissible"] else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyot", description="Optimal transport with polyhedral norm costs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def pair(sp, norm=True):
        sp.add_argument("--mu", required=True, help="measure file (CSV/JSON) or grid:dxN")
        sp.add_argument("--nu", required=True, help="measure file (CSV/JSON) or grid:dxN")
        if norm:
            sp.add_argument("--norm", default="l1", help="l1 | linf | gon:m | poly:<path> | <path>")

    s = sub.add_parser("solve", help="optimal plan and potential")
    pair(s)
    s.add_argument("--cone", help="restrict to the extremal cone with this comma-separated active set")
    s.add_argument("--out", default="solve")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("decompose", help="directed partition from a plan")
    pair(s)
    s.add_argument("--plan", required=True)
    s.add_argument("--out", default="partition.json")
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("cycles", help="cycle classes and signatures of a carriage")
    pair(s)
    s.add_argument("--carriage", required=True, help="CSV with columns i,j")
    s.add_argument("--cone", required=True, help="comma-separated active set of the cone")
    s.add_argument("--out")
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_cycles)

    s = sub.add_parser("map", help="assemble a transport map")
    pair(s)
    s.add_argument("--rounds", type=int, default=3)
    s.add_argument("--out", default="map")
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("diag", help="diagnostics of a stored partition")
    s.add_argument("--partition", required=True)
    s.add_argument("--mu", required=True)
    s.add_argument("--norm", default="l1")
    s.add_argument("--report", default="diagnostics.json")
    s.set_defaults(func=cmd_diag)

    s = sub.add_parser("pipeline", help="full chain with persisted stages")
    s.add_argument("--config", help="JSON or TOML config")
    s.add_argument("--mu")
    s.add_argument("--nu")
    s.add_argument("--norm", default="l1")
    s.add_argument("--fixture", choices=["chain3", "shift"])
    s.add_argument("--example", choices=["2ndmarg"])
    s.add_argument("--out")
    s.add_argument("--plot-data", action="store_true", help="also write plotting series")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("example-2ndmarg", help="second-marginal decompositions of the two-cell fixture")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "pipeline" and not (args.config or args.fixture or args.example or (args.mu and args.nu)):
        parser.error("pipeline needs --config, --fixture, --example or --mu/--nu")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PolyotError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
