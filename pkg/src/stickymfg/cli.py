"""``stickymfg`` command line: one subcommand per solver plus the self-test.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 validation failure (bad network, failed self-test).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence


from . import acceptance, io
from .errors import ConfigError, SolverError, StickyMFGError
from .fokker_planck import solve_stationary
from .hamiltonian import ControlModel, HamiltonianModel, QuadraticHamiltonian, hamiltonian_from_control
from .hjb import solve_discounted, solve_ergodic
from .mfg import CouplingModel, solve_mfg
from .network import EdgeField, Network, build_network
from .sde_sim import DEFAULT_BURN_IN, DEFAULT_NTRAJ, DEFAULT_T, build_ctmc, estimate_occupation, verify_hjb

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VALIDATION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(name: str):
    def conv(text: str) -> float:
        try:
            x = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not (x > 0 and math.isfinite(x)):
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {text}")
        return x
    return conv


def _damping(text: str) -> float:
    x = float(text)
    if not 0 < x <= 1:
        raise argparse.ArgumentTypeError(f"damping must be in (0, 1], got {text}")
    return x


def _existing(text: str) -> str:
    if not Path(text).is_file():
        raise argparse.ArgumentTypeError(f"file not found: {text}")
    return text


def _field_source(text: str) -> str:
    if text == "zero" or text.startswith("const:"):
        if text.startswith("const:"):
            try:
                float(text[6:])
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad constant in {text!r}") from None
        return text
    return _existing(text)


def _hamiltonian_source(text: str) -> str:
    if text == "quadratic":
        return text
    if text.startswith("control:"):
        _existing(text[8:])
        return text
    raise argparse.ArgumentTypeError("expected 'quadratic' or 'control:<model.json>'")


def _nonneg_int(text: str) -> int:
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return n


# ---------------------------------------------------------------------------
# argument parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stickymfg", description="Solvers for stationary mean field games on networks with sticky vertices.",
                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def common(sp: argparse.ArgumentParser, net: bool = True) -> None:
        if net:
            sp.add_argument("--net", required=True, type=_existing, help="network spec JSON")
            sp.add_argument("--grid-points", type=int, default=None,
                            help="override grid_points on every edge")
        sp.add_argument("--out-dir", default=".", help="directory for outputs and effective_config.json")

    def hamiltonian(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--hamiltonian", type=_hamiltonian_source, default="quadratic",
                        help="'quadratic' (H = p^2/2) or 'control:<model.json>' with keys bound, drift [c0, c1], "
                             "cost [k0, k1, k2]")

    fp = sub.add_parser("fp", help="stationary Fokker-Planck measure", formatter_class=fmt)
    common(fp)
    fp.add_argument("--drift", type=_field_source, default="zero", help="zero | const:<c> | EdgeField CSV")
    fp.add_argument("--out", default="measure.csv", help="density CSV (vertex_atoms.json is written alongside)")

    hjb = sub.add_parser("hjb", help="discounted HJB equation", formatter_class=fmt)
    common(hjb)
    hamiltonian(hjb)
    hjb.add_argument("--lambda", dest="lam", type=_positive("lambda"), required=True, help="discount rate > 0")
    hjb.add_argument("--F", dest="F", type=_field_source, default="zero", help="zero | const:<c> | EdgeField CSV")
    hjb.add_argument("--method", choices=("vertex", "global"), default="vertex",
                     help="vertex-value Newton with edge BVPs, or one monolithic Newton system")
    hjb.add_argument("--tol", type=_positive("tol"), default=1e-8, help="junction tolerance")
    hjb.add_argument("--out", default="u.csv")

    erg = sub.add_parser("ergodic", help="ergodic HJB by vanishing discount", formatter_class=fmt)
    common(erg)
    hamiltonian(erg)
    erg.add_argument("--F", dest="F", type=_field_source, default="zero", help="zero | const:<c> | EdgeField CSV")
    erg.add_argument("--tol", type=_positive("tol"), default=1e-6, help="extrapolation stopping tolerance")
    erg.add_argument("--out", default="u.csv", help="u CSV (rho.json is written alongside)")

    mfg = sub.add_parser("mfg", help="stationary MFG system by damped fixed point", formatter_class=fmt)
    common(mfg)
    hamiltonian(mfg)
    mfg.add_argument("--coupling", type=_existing, default=None,
                     help='coupling JSON {"edge": "identity|power:k|table", "vertex": "identity|power:k", '
                          '"monotone": "strict"}; default identity on both')
    mfg.add_argument("--tol", type=_positive("tol"), default=1e-8, help="fixed-point gap tolerance")
    mfg.add_argument("--damping", type=_damping, default=0.5, help="initial relaxation in (0, 1]")
    mfg.add_argument("--max-iter", type=int, default=200)

    sim = sub.add_parser("simulate", help="CTMC occupation measure", formatter_class=fmt)
    common(sim)
    sim.add_argument("--drift", type=_field_source, default="zero", help="zero | const:<c> | EdgeField CSV")
    sim.add_argument("--h", type=_positive("h"), default=0.02, help="target chain grid spacing")
    sim.add_argument("--T", type=_positive("T"), default=DEFAULT_T, help="horizon per trajectory")
    sim.add_argument("--burn-in", type=float, default=DEFAULT_BURN_IN, help="discarded initial time")
    sim.add_argument("--ntraj", type=int, default=DEFAULT_NTRAJ)
    sim.add_argument("--seed", type=_nonneg_int, default=42)
    sim.add_argument("--x0", default=None, help="vertex:<id> or edge:<id>:<s>; default first vertex")
    sim.add_argument("--out", default="occ.csv", help="occupation CSV (occ_vertices.json is written alongside)")

    ver = sub.add_parser("verify-hjb", help="simulated cost of the HJB feedback vs u(x0)", formatter_class=fmt)
    common(ver)
    ver.add_argument("--hamiltonian", type=_hamiltonian_source, default="quadratic",
                     help="'quadratic' means the control model b = a, l = a^2/2 with |a| <= --bound")
    ver.add_argument("--bound", type=_positive("bound"), default=10.0, help="control bound R for 'quadratic'")
    ver.add_argument("--lambda", dest="lam", type=_positive("lambda"), required=True)
    ver.add_argument("--F", dest="F", type=_field_source, default="zero", help="zero | const:<c> | EdgeField CSV")
    ver.add_argument("--x0", required=True, help="vertex:<id> or edge:<id>:<s>")
    ver.add_argument("--h", type=_positive("h"), default=0.02)
    ver.add_argument("--ntraj", type=int, default=2000)
    ver.add_argument("--T-eff", dest="T_eff", type=_positive("T-eff"), default=None,
                     help="truncation horizon; default 20/lambda")
    ver.add_argument("--seed", type=_nonneg_int, default=42)
    ver.add_argument("--out", default="verify.json")

    st = sub.add_parser("selftest", help="run the acceptance suite", formatter_class=fmt)
    common(st, net=False)
    st.add_argument("level", nargs="?", choices=("quick", "full"), default="quick")
    st.add_argument("--seed", type=_nonneg_int, default=42)
    st.add_argument("--fixture", action="append", default=[], metavar="NAME=SPEC.json",
                    help="replace a built-in fixture network (sticky_star, asymmetric_star, triangle_with_tail)")
    st.add_argument("--out", default="selftest_report.json")
    return p


# ---------------------------------------------------------------------------
# helpers


def _network(args: argparse.Namespace) -> Network:
    spec = io.read_json(args.net)
    if args.grid_points is not None:
        if args.grid_points < 3:
            raise ConfigError("--grid-points must be >= 3")
        spec = dict(spec, edges=[dict(e, grid_points=args.grid_points) for e in spec.get("edges", [])])
    return build_network(spec)


def load_field(source: str, net: Network) -> EdgeField:
    if source == "zero":
        return EdgeField.zeros(net)
    if source.startswith("const:"):
        return EdgeField.constant(net, float(source[6:]))
    return io.read_field_csv(source, net)


def load_hamiltonian(source: str, bound: float | None = None) -> HamiltonianModel:
    if source == "quadratic":
        return QuadraticHamiltonian() if bound is None else hamiltonian_from_control(ControlModel.quadratic_model(bound))
    spec = io.read_json(source[8:])
    unknown = set(spec) - {"bound", "drift", "cost"}
    if unknown or "bound" not in spec:
        raise ConfigError(f"control model needs keys bound, drift, cost (unknown: {sorted(unknown)})")
    try:
        ctrl = ControlModel.polynomial(float(spec["bound"]), spec.get("drift", [0.0, 1.0]), spec.get("cost", [0.0, 0.0, 0.5]))
        return hamiltonian_from_control(ctrl)
    except ValueError as exc:
        raise ConfigError(f"control model: {exc}") from exc


def parse_point(text: str, net: Network) -> int | tuple[int, float]:
    parts = text.split(":")
    try:
        if parts[0] == "vertex" and len(parts) == 2:
            return net.vertex_index(parts[1])
        if parts[0] == "edge" and len(parts) == 3:
            a = net.edge_index(parts[1])
            s = float(parts[2])
            if not 0 <= s <= net.edges[a].length:
                raise ConfigError(f"{text}: arclength outside [0, {net.edges[a].length}]")
            return a, s
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad point {text!r}: {exc}") from exc
    raise ConfigError(f"bad point {text!r}: expected vertex:<id> or edge:<id>:<s>")


def parse_fixtures(items: Sequence[str]) -> dict[str, dict[str, Any]]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or name not in acceptance.fixtures.DUALITY_FIXTURES:
            raise ConfigError(f"--fixture expects NAME=SPEC.json with NAME in {sorted(acceptance.fixtures.DUALITY_FIXTURES)}")
        out[name] = io.read_json(path)
    return out


def _effective(args: argparse.Namespace) -> dict[str, Any]:
    cfg = dict(vars(args))
    if "lam" in cfg:
        cfg["lambda"] = cfg.pop("lam")
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_fp(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    sol = solve_stationary(load_field(args.drift, net), net)
    csv_path = out / args.out
    io.write_measure(csv_path, csv_path.parent / "vertex_atoms.json", sol.measure, net)
    io.write_json(out / "report.json", sol.report.to_dict())
    return EXIT_OK


def cmd_hjb(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    sol = solve_discounted(args.lam, load_field(args.F, net), None, load_hamiltonian(args.hamiltonian), net,
                           method=args.method, tol_junction=args.tol)
    io.write_field_csv(out / args.out, sol.u, net)
    io.write_json(out / "report.json", sol.report.to_dict())
    return EXIT_OK


def cmd_ergodic(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    sol = solve_ergodic(load_field(args.F, net), None, load_hamiltonian(args.hamiltonian), net, tol=args.tol)
    u_path = out / args.out
    io.write_field_csv(u_path, sol.u, net)
    io.write_json(u_path.parent / "rho.json", {"rho": sol.rho})
    io.write_json(out / "report.json", sol.report.to_dict())
    return EXIT_OK


def cmd_mfg(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    coupling = CouplingModel.identity() if args.coupling is None else CouplingModel.from_spec(io.read_json(args.coupling))
    sol = solve_mfg(coupling, None, load_hamiltonian(args.hamiltonian), net, damping=args.damping, tol=args.tol,
                    max_iter=args.max_iter)
    io.write_field_csv(out / "u.csv", sol.u, net)
    io.write_field_csv(out / "m.csv", sol.measure.density, net)
    io.write_json(out / "atoms.json", io.atoms_by_id(sol.measure.atoms, net))
    io.write_json(out / "rho.json", {"rho": sol.rho})
    io.write_history_csv(out / "history.csv", sol.report.extra["history"])
    io.write_json(out / "report.json", sol.report.to_dict())
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    if not 0 <= args.burn_in < args.T:
        raise ConfigError("--burn-in must satisfy 0 <= burn_in < T")
    if args.ntraj < 2:
        raise ConfigError("--ntraj must be >= 2 (standard errors need two trajectories)")
    q = build_ctmc(load_field(args.drift, net), net, args.h)
    if args.x0 is None:
        x0 = 0
    else:
        pt = parse_point(args.x0, net)
        x0 = pt if isinstance(pt, int) else q.state_of(*pt)
    est = estimate_occupation(q, x0, T=args.T, n_traj=args.ntraj, seed=args.seed, burn_in=args.burn_in)
    csv_path = out / args.out
    io.write_field_csv(csv_path, est.density, q.net, {"stderr": est.density_se})
    vert = {
        q.net.vertices[v].id: {
            "fraction": est.vertex_fraction[v],
            "fraction_stderr": est.vertex_fraction_se[v],
            **({"atom": est.atoms[v], "atom_stderr": est.atoms_se[v]} if v in est.atoms else {}),
        }
        for v in range(q.net.n_vertices)
    }
    io.write_json(csv_path.parent / "occ_vertices.json",
                  {"vertices": vert, "h": max(e.h for e in q.net.edges), "horizon": est.horizon,
                   "burn_in": est.burn_in, "n_traj": est.n_traj, "events": est.events, "warnings": est.warnings})
    for w in est.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, out: Path) -> int:
    net = _network(args)
    H = load_hamiltonian(args.hamiltonian, bound=args.bound)
    F = load_field(args.F, net)
    T_eff = args.T_eff if args.T_eff is not None else 20.0 / args.lam
    if args.ntraj < 2:
        raise ConfigError("--ntraj must be >= 2")
    r = verify_hjb(net, args.lam, F, None, H, parse_point(args.x0, net), args.h, args.ntraj, T_eff, args.seed)
    io.write_json(out / args.out, {"u_pde": r.u_pde, "J_mc": r.J_mc, "stderr": r.stderr, "h": r.h,
                                   "x0": args.x0, "T_eff": T_eff})
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace, out: Path) -> int:
    overrides = parse_fixtures(args.fixture)
    results = []
    budget_ok = True
    for n in acceptance.QUICK if args.level == "quick" else acceptance.FULL:
        r = acceptance.run_criterion(n, overrides or None, args.seed)
        print(r.line(), flush=True)
        budget_ok &= r.within_budget
        results.append(r)
    report = acceptance.suite_report(results, args.level, args.seed)
    io.write_json(out / args.out, report)
    ok = report["passed"] and budget_ok
    print(f"selftest {args.level}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "fp": cmd_fp, "hjb": cmd_hjb, "ergodic": cmd_ergodic, "mfg": cmd_mfg,
    "simulate": cmd_simulate, "verify-hjb": cmd_verify, "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out_dir)
    t0 = time.perf_counter()
    try:
        io.write_json(out / "effective_config.json", _effective(args))
        code = COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"stickymfg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"stickymfg: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except StickyMFGError as exc:
        print(f"stickymfg: validation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"stickymfg: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "selftest":
        print(f"{args.command}: done in {time.perf_counter() - t0:.2f}s, outputs in {out}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
