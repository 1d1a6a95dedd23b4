"""Command line interface: ``zrpeq <subcommand> [options]``.

Results go to ``--out`` (or stdout); a one-line summary goes to stderr.
Exit status is 0 on success, 2 for invalid input and 1 for numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import canonical, grand_canonical as gc, legendre, simulator
from .config import SUBCOMMANDS, RunConfig, load_config
from .errors import ConfigError, NumericalError, UnknownName
from .expression import load_weight
from .weights import BUILTIN_NAMES, builtin

# options whose values may start with a minus sign
_LIST_OPTS = {"--mu", "--psi", "--rho", "--direction", "--box"}


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("parameters take the form key=value")
    k, v = text.split("=", 1)
    try:
        return k.strip(), float(v)
    except ValueError:
        return k.strip(), v.strip()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("weight")
    g.add_argument("--config", help="JSON or YAML file with RunConfig keys")
    g.add_argument("--weight", help=f"built-in name ({', '.join(BUILTIN_NAMES)}) or weight file")
    g.add_argument("--b", type=float, help="tail exponent parameter b")
    g.add_argument("--b1", type=float)
    g.add_argument("--b2", type=float)
    g.add_argument("--param", type=_kv, action="append", default=[], metavar="KEY=VALUE")
    g.add_argument("--tol", type=float, help="series truncation tolerance (default 1e-10)")
    g.add_argument("--grad-tol", dest="grad_tol", type=float, help="solver gradient tolerance (default 1e-8)")
    g.add_argument("--eps-phase", dest="eps_phase", type=float, help="relative phase threshold (default 1e-6)")
    g.add_argument("--out", help="output file (default stdout)")

    p = _Parser(prog="zrpeq", description="Equilibrium structure of two-species zero-range processes")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    s = sub.add_parser("gc-eval", parents=[common], help="grand-canonical z, p, R, covariance")
    s.add_argument("--mu", type=_floats)
    s.add_argument("--psi", type=_floats)

    s = sub.add_parser("boundary", parents=[common], help="boundary of the convergence domain (CSV)")
    s.add_argument("--tmin", type=float)
    s.add_argument("--tmax", type=float)
    s.add_argument("--npoints", type=int)

    s = sub.add_parser("solve", parents=[common], help="entropy, background density and phase (JSON)")
    s.add_argument("--rho", type=_floats)

    s = sub.add_parser("phase-diagram", parents=[common], help="phase labels on a density grid (CSV)")
    s.add_argument("--box", type=_floats, help="upper density bound(s), e.g. 3 or 3,2")
    s.add_argument("--res", type=int)

    s = sub.add_parser("equivalence", parents=[common], help="relative entropy along system sizes (CSV)")
    s.add_argument("--rho", type=_floats)
    s.add_argument("--L", type=_ints)

    s = sub.add_parser("marginal", parents=[common], help="canonical single-site marginal (CSV)")
    s.add_argument("--L", type=_ints)
    s.add_argument("--N", type=_ints)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo run (JSON summary)")
    s.add_argument("--L", type=_ints)
    s.add_argument("--N", type=_ints)
    s.add_argument("--p", help="jump law for both species: sym or asym:q")
    s.add_argument("--p1")
    s.add_argument("--p2")
    s.add_argument("--seed", type=int)
    s.add_argument("--events", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=float)
    s.add_argument("--replicas", type=int)
    s.add_argument("--series", help="CSV file for (t, M1, M2, argmax sites)")

    s = sub.add_parser("tail-rate", parents=[common], help="decay-rate estimates along a direction (CSV)")
    s.add_argument("--mu", type=_floats)
    s.add_argument("--psi", type=_floats)
    s.add_argument("--direction", type=_floats)
    s.add_argument("--radii", type=_floats)

    s = sub.add_parser("figures", parents=[common], help="data for the standard phase diagrams")
    s.add_argument("--outdir")
    s.add_argument("--res", type=int)
    s.add_argument("--box", type=_floats)
    s.add_argument("--tmin", type=float)
    s.add_argument("--tmax", type=float)
    s.add_argument("--npoints", type=int)
    return p


def _fix_negative_lists(argv):
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _LIST_OPTS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and argv[i + 1][1:2] in set("0123456789.i"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def config_from_args(argv) -> RunConfig:
    ns = build_parser().parse_args(_fix_negative_lists(list(argv)))
    data = {}
    if ns.config:
        data.update(load_config(ns.config))
        if data.get("subcommand", ns.subcommand) != ns.subcommand:
            raise ConfigError(f"config file is for {data['subcommand']!r}, not {ns.subcommand!r}")
    data["subcommand"] = ns.subcommand
    params = dict(data.get("params") or {})
    for key in ("b", "b1", "b2"):
        v = getattr(ns, key, None)
        if v is not None:
            params[key] = v
    params.update(dict(ns.param))
    data["params"] = params
    skip = {"config", "b", "b1", "b2", "param", "p", "subcommand"}
    for k, v in vars(ns).items():
        if k in skip or v is None:
            continue
        data[k] = v
    if getattr(ns, "p", None):
        data.setdefault("p1", ns.p)
        data.setdefault("p2", ns.p)
        if ns.p1 is None:
            data["p1"] = ns.p
        if ns.p2 is None:
            data["p2"] = ns.p
    return RunConfig.from_dict(data)


def resolve_weight(cfg: RunConfig):
    name = cfg.weight
    if name in BUILTIN_NAMES:
        return builtin(name, cfg.params)
    path = Path(name)
    if path.suffix in (".json", ".yaml", ".yml") or path.exists():
        return load_weight(path)
    raise UnknownName(f"{name!r} is neither a built-in weight nor a weight file")


def _pair(v, what):
    if v is None or len(v) != 2:
        raise ConfigError(f"--{what} needs two comma-separated values")
    return tuple(v)


def _point(cfg: RunConfig):
    if (cfg.mu is None) == (cfg.psi is None):
        raise ConfigError("give exactly one of --mu or --psi")
    if cfg.mu is not None:
        return gc.ChemicalPotential(*_pair(cfg.mu, "mu"))
    return gc.Fugacity(*_pair(cfg.psi, "psi"))


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


class _Output:
    def __init__(self, path: Optional[str]):
        self.path = path

    def write(self, text: str):
        if self.path:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            Path(self.path).write_text(text)
        else:
            sys.stdout.write(text)


def _csv_text(cfg: RunConfig, header, rows) -> str:
    buf = io.StringIO()
    buf.write("# config: " + cfg.dumps() + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# subcommands


def cmd_gc_eval(cfg, w):
    st = gc.evaluate(w, _point(cfg), cfg.tol, strict=False)
    _Output(cfg.out).write(json.dumps(st.to_dict(), indent=2) + "\n")
    R = ", ".join(f"{v:.10g}" for v in st.R)
    return f"{w.name}: p={st.p_value:.10g} R=({R}) {st.membership.value}"


def cmd_boundary(cfg, w):
    grid = np.linspace(cfg.tmin, cfg.tmax, cfg.npoints)
    bd = gc.domain_boundary(w, grid)
    flags = bd.is_corner()
    rows = [(t, u, int(c)) for t, u, c in zip(bd.grid, bd.values, flags)]
    for c in bd.corner_list:
        rows.append((c.t, bd.boundary_fn(c.t), 1))
    rows.sort(key=lambda r: r[0])
    _Output(cfg.out).write(_csv_text(cfg, ["tilde_mu1", "tilde_mu2", "is_corner"], rows))
    return f"{w.name}: {len(grid)} boundary points, {len(bd.corner_list)} corner(s)"


def cmd_solve(cfg, w):
    sol = legendre.solve(w, _pair(cfg.rho, "rho"), cfg.grad_tol, cfg.eps_phase)
    _Output(cfg.out).write(json.dumps(sol.to_dict(), indent=2) + "\n")
    return f"{w.name}: rho=({sol.rho.rho1:g}, {sol.rho.rho2:g}) phase={sol.phase.value} s={sol.s_value:.10g}"


_PHASE_IDS = {p.value: i for i, p in enumerate(legendre.Phase)}


def _box(cfg):
    if cfg.box is None:
        return 3.0
    if len(cfg.box) == 1:
        return cfg.box[0]
    return tuple(cfg.box[:2])


def _gnuplot(csv_name: str, title: str) -> str:
    names = " ".join(f'"{p.value}"' for p in legendre.Phase)
    return f"""# phase labels: 0..4 = {names}
set datafile separator ','
set datafile commentschars '#'
set key off
set title '{title}'
set xlabel 'rho_1'
set ylabel 'rho_2'
set size ratio -1
set cbrange [0:4]
set palette defined (0 '#f7f7f7', 1 '#d95f02', 2 '#1b9e77', 3 '#7570b3', 4 '#000000')
plot '{csv_name}' every ::1 using 1:2:9 with points pt 5 ps 1.2 lc palette, \\
     '{csv_name}' every ::1 using 1:2:($4-$1):($5-$2) with vectors nohead lc rgb '#888888'
"""


def _phase_rows(grid):
    rows = []
    for r1, r2, label, sol in grid.rows():
        if sol is None:
            rows.append((r1, r2, label, math.nan, math.nan, math.nan, math.nan, math.nan, _PHASE_IDS[label]))
        else:
            rows.append((r1, r2, label, sol.rc[0], sol.rc[1], sol.s_value, sol.mbar.mu1, sol.mbar.mu2,
                         _PHASE_IDS[label]))
    return rows


_PD_HEADER = ["rho1", "rho2", "phase", "rc1", "rc2", "s", "mu1", "mu2", "phase_id"]


def _write_phase_diagram(cfg, w, out: Path, title: str):
    grid = legendre.phase_diagram(w, _box(cfg), cfg.res, cfg.grad_tol, cfg.eps_phase)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_csv_text(cfg, _PD_HEADER, _phase_rows(grid)))
    gp = out.with_suffix(".gp")
    gp.write_text(_gnuplot(out.name, title))
    counts = {p.value: grid.count(p) for p in legendre.Phase if grid.count(p)}
    return counts


def cmd_phase_diagram(cfg, w):
    if cfg.out is None:
        grid = legendre.phase_diagram(w, _box(cfg), cfg.res, cfg.grad_tol, cfg.eps_phase)
        sys.stdout.write(_csv_text(cfg, _PD_HEADER, _phase_rows(grid)))
        counts = {p.value: grid.count(p) for p in legendre.Phase if grid.count(p)}
    else:
        counts = _write_phase_diagram(cfg, w, Path(cfg.out), f"{w.name} {w.params}")
    return f"{w.name}: " + ", ".join(f"{k}={v}" for k, v in counts.items())


def cmd_equivalence(cfg, w):
    if not cfg.L:
        raise ConfigError("--L needs a list of system sizes")
    rho = _pair(cfg.rho, "rho")
    rows = canonical.equivalence_scan(w, rho, cfg.L)
    out = [(r.L, r.N[0], r.N[1], r.h, r.log_z_per_site, r.residual) for r in rows]
    _Output(cfg.out).write(_csv_text(cfg, ["L", "N1", "N2", "h", "logZ_per_site", "ldp_residual"], out))
    return f"{w.name}: h = " + ", ".join(f"{r.h:.4g}" for r in rows)


def cmd_marginal(cfg, w):
    if not cfg.L or len(cfg.L) != 1:
        raise ConfigError("--L needs a single system size")
    L = cfg.L[0]
    N = _pair(cfg.N, "N")
    table = canonical.build_table(w, L, N)
    m = canonical.marginal_table(table, L, N)
    rows = [(k1, k2, m[k1, k2]) for k1 in range(N[0] + 1) for k2 in range(N[1] + 1)]
    _Output(cfg.out).write(_csv_text(cfg, ["k1", "k2", "probability"], rows))
    return f"{w.name}: marginal on L={L}, N={N}, total mass {m.sum():.12g}"


def cmd_simulate(cfg, w):
    if not cfg.L or len(cfg.L) != 1:
        raise ConfigError("--L needs a single system size")
    params = simulator.SimParams(cfg.L[0], _pair(cfg.N, "N"), cfg.p1, cfg.p2, cfg.seed,
                                 cfg.events, cfg.burn_in)
    results = simulator.run_replicas(w, params, cfg.replicas)
    first = results[0]
    fr = np.array([r.mean_max_fraction for r in results])
    s = first.samples
    coloc = None
    if params.N[0] and params.N[1] and len(s):
        coloc = float(np.mean(s[:, 3] == s[:, 4]))
    summary = {
        "L": params.L, "N": list(params.N), "events": first.events, "replicas": len(results),
        "seed": cfg.seed, "time": first.time,
        "mean_max_fraction": [_jsonable(float(v)) for v in fr.mean(axis=0)],
        "final_totals": list(first.final.totals),
        "conserved": all(r.final.totals == params.N for r in results),
        "colocation_frequency": coloc,
    }
    _Output(cfg.out).write(json.dumps(summary, indent=2) + "\n")
    if cfg.series:
        text = _csv_text(cfg, ["t", "M1", "M2", "argmax1", "argmax2"],
                         [(r[0], int(r[1]), int(r[2]), int(r[3]), int(r[4])) for r in s])
        Path(cfg.series).write_text(text)
    m = ", ".join(f"{v:.4g}" for v in fr.mean(axis=0))
    return f"{w.name}: {first.events} events x {len(results)} replica(s), mean M/L = ({m})"


def cmd_tail_rate(cfg, w):
    direction = _pair(cfg.direction, "direction")
    radii = cfg.radii or [25, 50, 100, 200]
    est = gc.tail_rate(w, _point(cfg), direction, radii)
    _Output(cfg.out).write(_csv_text(cfg, ["r", "estimate"], list(zip(radii, est))))
    return f"{w.name}: tail rate at r={radii[-1]:g} is {est[-1]:.4g}"


FIGURE_RUNS = (
    ("phase_evans_hanney_b4", "evans-hanney", {"b": 4.0}),
    ("phase_evans_hanney_b3", "evans-hanney", {"b": 3.0}),
    ("phase_evans_hanney_b2", "evans-hanney", {"b": 2.0}),
    ("phase_slowed_free_b4", "slowed-free", {"b": 4.0}),
    ("phase_symmetrized_b4", "symmetrized", {"b": 4.0}),
)


def cmd_figures(cfg, _w):
    outdir = Path(cfg.outdir or "figures")
    outdir.mkdir(parents=True, exist_ok=True)
    parts = []
    for stem, name, params in FIGURE_RUNS:
        sub = RunConfig.from_dict({**cfg.to_dict(), "weight": name, "params": params,
                                   "subcommand": "phase-diagram", "out": str(outdir / f"{stem}.csv")})
        w = builtin(name, params)
        counts = _write_phase_diagram(sub, w, outdir / f"{stem}.csv", f"{name} b={params['b']:g}")
        bcfg = RunConfig.from_dict({**sub.to_dict(), "subcommand": "boundary"})
        bd = gc.domain_boundary(w, np.linspace(cfg.tmin, cfg.tmax, cfg.npoints))
        rows = []
        for t, u in zip(bd.grid, bd.values):
            mu = gc.boundary_point(bd.boundary_fn, t)
            rows.append((t, u, mu.mu1, mu.mu2))
        (outdir / f"{stem}_boundary.csv").write_text(
            _csv_text(bcfg, ["tilde_mu1", "tilde_mu2", "mu1", "mu2"], rows))
        parts.append(f"{stem}: " + "/".join(f"{k}={v}" for k, v in counts.items()))
    return "; ".join(parts)


_COMMANDS = {
    "gc-eval": cmd_gc_eval,
    "boundary": cmd_boundary,
    "solve": cmd_solve,
    "phase-diagram": cmd_phase_diagram,
    "equivalence": cmd_equivalence,
    "marginal": cmd_marginal,
    "simulate": cmd_simulate,
    "tail-rate": cmd_tail_rate,
    "figures": cmd_figures,
}
assert set(_COMMANDS) == set(SUBCOMMANDS)


def dispatch(argv) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        cfg = config_from_args(argv)
        w = None if cfg.subcommand == "figures" else resolve_weight(cfg)
        summary = _COMMANDS[cfg.subcommand](cfg, w)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary, file=sys.stderr)
    return 0


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
