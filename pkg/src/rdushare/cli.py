"""Command-line front end.

Every subcommand writes CSV files (header row, 12 significant digits) and a
JSON summary into ``--out``.  Flags fall back to ``RDUSHARE_<FLAG>``
environment variables, e.g. ``RDUSHARE_OUT=/tmp/run``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import distortion as dist
from .economy import CARA, Economy, allocation_density, borch_check, no_side_payment_weights, solve_allocation
from .envelope import build_envelope, nudged_envelope
from .nudge import NudgeConfig, optimal_effort
from .welfare import ce_sweep, welfare_report

ENV_PREFIX = "RDUSHARE_"
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# --- output helpers ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return "%.12g" % v


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def parse_sweep(spec: str) -> tuple[str | None, np.ndarray]:
    """``name=start:stop:step`` or ``start:stop:step`` -> (name, grid)."""
    name = None
    if "=" in spec:
        name, spec = spec.split("=", 1)
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise dist.ConfigurationError(f"sweep must look like start:stop:step, got {spec!r}") from None
    if not step > 0.0:
        raise dist.ConfigurationError(f"sweep step must be positive, got {step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return name, np.round(start + step * np.arange(max(count, 0)), 12)


# --- economies used by the recipes -----------------------------------------------


def cara_economy(T: dist.WeightingFunction, betas: Sequence[float], w: float = 0.0) -> Economy:
    lam = no_side_payment_weights(betas[1:])
    return Economy(T, CARA(betas[0]), tuple(CARA(b) for b in betas[1:]), lam, w)


BASELINE = (0.5, 0.5, 2.0)


def load_economy(path: str | None) -> Economy:
    if path is None:
        return cara_economy(dist.Prelec(0.8), BASELINE)
    with open(path) as fh:
        return Economy.from_dict(json.load(fh))


# --- table builders ---------------------------------------------------------------


def envelope_rows(T: dist.WeightingFunction, grid: int):
    E = build_envelope(T)
    return E, E.table(grid)


def allocation_rows(econ: Economy, grid: int, envelope=None):
    alloc = solve_allocation(econ, envelope)
    t = (np.arange(grid) + 0.5) / grid
    P = alloc.payoffs(t)
    return alloc, np.column_stack([t, P.T])


def density_rows(econ: Economy, grid: int, seed: int, envelope=None, label: Sequence = ()):
    """Rows (label..., kind, x_1..x_n, value): atoms carry their mass, the rest density."""
    out = allocation_density(econ, envelope, grid=grid, seed=seed)
    n = econ.n
    rows = []
    for k, at in enumerate(out["laws"][0].atoms):
        locs = [law.atoms[k].location for law in out["laws"]]
        rows.append([*label, "atom", *locs, *[at.mass] * n])
    if out["method"] == "analytic":
        for r in out["table"]:
            rows.append([*label, "density", *r[1:1 + n], *r[1 + n:]])
    else:
        for i, (x, d) in enumerate(out["histograms"]):
            for xv, dv in zip(x, d):
                vals = [np.nan] * n
                dens = [np.nan] * n
                vals[i], dens[i] = xv, dv
                rows.append([*label, "histogram", *vals, *dens])
    return out, rows


def _law_summary(alloc) -> list[dict]:
    return [
        {
            "agent": law.index + 1,
            "atoms": [{"location": a.location, "mass": a.mass} for a in law.atoms],
            "support": list(law.support),
            "continuous_mass": law.continuous_mass,
            "continuous_width": alloc.width(law.index),
        }
        for law in alloc.laws()
    ]


# --- recipes ------------------------------------------------------------------------


def _recipe_fig1(args, out: Path):
    rows = []
    for a in (0.5, 2.0):
        E, tab = envelope_rows(dist.Prelec(a), args.grid)
        rows += [[a, *r] for r in tab]
    write_csv(out / "fig1.csv", ["alpha", "t", "Ttilde", "delta", "delta_prime"], rows)


def _fi_curve(make, grid):
    return [[g, build_envelope(make(g)).fi_mass] for g in grid]


def _recipe_fig2a(args, out: Path):
    grid = np.unique(np.concatenate([np.round(np.arange(1, 201) * 0.05, 12), [1.0]]))
    write_csv(out / "fig2a.csv", ["alpha", "fi_mass"], _fi_curve(dist.Prelec, grid))


def _recipe_fig2b(args, out: Path):
    grid = np.round(np.arange(6, 201) * 0.05, 12)
    write_csv(out / "fig2b.csv", ["gamma", "fi_mass"], _fi_curve(dist.TverskyKahneman, grid))


def _density_recipe(name: str, T, betas):
    def run(args, out: Path):
        econ = cara_economy(T, betas)
        res, rows = density_rows(econ, args.grid, args.seed)
        n = econ.n
        write_csv(out / f"{name}.csv", ["kind", *[f"x{i + 1}" for i in range(n)], *[f"f{i + 1}" for i in range(n)]], rows)
        write_json(out / f"{name}.json", {"laws": _law_summary(solve_allocation(econ)), "method": res["method"]})

    return run


def _allocation_recipe(name: str, T, betas):
    def run(args, out: Path):
        econ = cara_economy(T, betas)
        alloc, rows = allocation_rows(econ, args.grid)
        write_csv(out / f"{name}.csv", ["u", *[f"X{i + 1}" for i in range(econ.n)]], rows)
        write_json(out / f"{name}.json", {"fi_mass": alloc.envelope.fi_mass, "laws": _law_summary(alloc)})

    return run


def _recipe_fig6(args, out: Path):
    rows = []
    for kappa in (0.1, 0.3, 0.5, 0.7, 0.9):
        for g in np.round(np.linspace(0.0, 1.0, 51), 12):
            rows.append([kappa, g, build_envelope(dist.Hurwicz(g, kappa)).fi_mass])
    write_csv(out / "fig6.csv", ["kappa", "gamma", "fi_mass"], rows)


def _recipe_fig8(args, out: Path):
    template = cara_economy(dist.Prelec(0.8), BASELINE)
    _, alphas = parse_sweep("0.1:3.0:0.05")
    tab = ce_sweep(template, alphas, tol=args.tol)
    write_csv(out / "fig8.csv", ["alpha", "ce1", "ce2", "ce3", "ce_sum"], tab)


def _recipe_fig9(args, out: Path):
    # densities of the nudged economy for fixed mixing weights f(M); the
    # effort cost is not charged here
    econ = cara_economy(dist.Prelec(0.4), BASELINE)
    E = build_envelope(econ.weighting)
    rows = []
    for f in (0.0, 0.25, 0.5, 0.75, 1.0):
        EM = nudged_envelope(E, f)
        _, part = density_rows(econ.with_weighting(EM.weighting), args.grid, args.seed, envelope=EM, label=[f])
        rows += part
    write_csv(out / "fig9.csv", ["f", "kind", "x1", "x2", "x3", "f1", "f2", "f3"], rows)


def nudge_sweep(alphas, *, beta1=0.5, beta2=0.4, w=1.0, k=20.0):
    rows = []
    for a in alphas:
        cfg = NudgeConfig(dist.Prelec(float(a)), CARA(beta1), CARA(beta2), 1.0, w, k)
        sol = optimal_effort(cfg)
        rows.append([float(a), sol.M_star, sol.V_star, sol.fi_mass])
    return rows


def _recipe_fig10(args, out: Path):
    _, alphas = parse_sweep("0.1:1.0:0.02")
    write_csv(out / "fig10.csv", ["alpha", "M_star", "V_at_star", "fi_mass_at_star"], nudge_sweep(alphas))


T1_CONVEX = dist.conjugate(dist.Rescaled(dist.conjugate(dist.Prelec(0.5)), 0.25))
T2_CONCAVE = dist.Rescaled(dist.Prelec(0.5), 0.25)

RECIPES: dict[str, Callable] = {
    "fig1": _recipe_fig1,
    "fig2a": _recipe_fig2a,
    "fig2b": _recipe_fig2b,
    "fig3": _density_recipe("fig3", dist.Prelec(0.8), BASELINE),
    "fig4a": _density_recipe("fig4a", dist.Prelec(0.8), (0.5, 0.5, 0.7)),
    "fig4b": _density_recipe("fig4b", dist.Prelec(0.8), (2.0, 0.5, 2.0)),
    "fig5a": _allocation_recipe("fig5a", T2_CONCAVE, BASELINE),
    "fig5b": _allocation_recipe("fig5b", T1_CONVEX, BASELINE),
    "fig5c": _density_recipe("fig5c", dist.Prelec(1.2), BASELINE),
    "fig6": _recipe_fig6,
    "fig7": _density_recipe("fig7", dist.Hurwicz(0.5, 0.5), BASELINE),
    "fig8": _recipe_fig8,
    "fig9": _recipe_fig9,
    "fig10": _recipe_fig10,
}


# --- subcommands -------------------------------------------------------------------


def _weighting_arg(args) -> dist.WeightingFunction:
    if args.weighting:
        return dist.from_dict(json.loads(args.weighting))
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        block = cfg.get("weighting") or cfg.get("rdu", {}).get("weighting")
        if block is None:
            raise dist.ConfigurationError("config has no weighting block")
        return dist.from_dict(block)
    raise dist.ConfigurationError("give --weighting JSON or --config FILE")


def cmd_envelope(args, out: Path) -> None:
    T = _weighting_arg(args)
    E, tab = envelope_rows(T, args.grid)
    write_csv(out / "envelope.csv", ["t", "Ttilde", "delta", "delta_prime"], tab)
    write_json(out / "envelope.json", E.summary())
    print(json.dumps({k: E.summary()[k] for k in ("shape", "pstar", "fi_mass")}, sort_keys=True))


def cmd_allocate(args, out: Path) -> None:
    econ = load_economy(args.config)
    alloc, rows = allocation_rows(econ, args.grid)
    write_csv(out / "allocation.csv", ["u", *[f"X{i + 1}" for i in range(econ.n)]], rows)
    summary = {
        "envelope": alloc.envelope.summary(),
        "laws": _law_summary(alloc),
        "feasibility_error": alloc.feasibility_error(),
        "borch_deviation": borch_check(alloc, econ),
    }
    write_json(out / "allocation.json", summary)


def cmd_density(args, out: Path) -> None:
    econ = load_economy(args.config)
    res, rows = density_rows(econ, args.grid, args.seed)
    n = econ.n
    write_csv(out / "density.csv", ["kind", *[f"x{i + 1}" for i in range(n)], *[f"f{i + 1}" for i in range(n)]], rows)
    write_json(out / "density.json", {"method": res["method"], "laws": _law_summary(solve_allocation(econ))})


def cmd_ce(args, out: Path) -> None:
    econ = load_economy(args.config)
    if args.sweep:
        name, grid = parse_sweep(args.sweep)
        if name not in (None, "alpha"):
            raise dist.ConfigurationError(f"only alpha sweeps are supported, got {name!r}")
        tab = ce_sweep(econ, grid, tol=args.tol)
        write_csv(out / "ce.csv", ["alpha", *[f"ce{i + 1}" for i in range(econ.n)], "ce_sum"], tab)
        return
    rep = welfare_report(solve_allocation(econ), tol=args.tol)
    write_csv(out / "ce.csv", [*[f"ce{i + 1}" for i in range(econ.n)], "ce_sum"], [[*rep.ce, rep.ce_sum]])
    write_json(out / "ce.json", {"ce": rep.ce, "ce_sum": rep.ce_sum, "side_payments": rep.side_payments,
                                 "abs_error": rep.abs_error, "nodes": rep.nodes})


def cmd_nudge(args, out: Path) -> None:
    econ = load_economy(args.config) if args.config else None
    if args.alpha_sweep:
        _, grid = parse_sweep(args.alpha_sweep)
        rows = []
        for a in grid:
            if econ is None:
                rows += nudge_sweep([a], k=args.k)
            else:
                sol = optimal_effort(NudgeConfig.from_economy(econ.with_weighting(dist.Prelec(float(a))), k=args.k))
                rows.append([float(a), sol.M_star, sol.V_star, sol.fi_mass])
        write_csv(out / "nudge.csv", ["alpha", "M_star", "V_at_star", "fi_mass_at_star"], rows)
        return
    if econ is None:
        cfg = NudgeConfig(dist.Prelec(0.4), CARA(0.5), CARA(0.4), 1.0, 1.0, args.k)
    else:
        cfg = NudgeConfig.from_economy(econ, k=args.k)
    sol = optimal_effort(cfg)
    write_csv(out / "nudge_scan.csv", ["M", "V"], np.column_stack([sol.grid, sol.values]))
    write_json(out / "nudge.json", {"M_star": sol.M_star, "V_star": sol.V_star, "foc_residual": sol.foc_residual,
                                    "boundary": sol.boundary, "fi_mass": sol.fi_mass, "multimodal": sol.multimodal})


def cmd_sweep(args, out: Path) -> None:
    if args.recipe is None:
        raise dist.ConfigurationError("sweep needs --recipe; available: " + ", ".join(RECIPES))
    run_recipe(args.recipe, args, out)


def run_recipe(name: str, args, out: Path) -> None:
    if name not in RECIPES:
        raise dist.ConfigurationError(f"unknown recipe {name!r}; available: {', '.join(RECIPES)}")
    RECIPES[name](args, out)


COMMANDS = {
    "envelope": cmd_envelope,
    "allocate": cmd_allocate,
    "density": cmd_density,
    "ce": cmd_ce,
    "nudge": cmd_nudge,
    "sweep": cmd_sweep,
}


def _env(name: str, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    return default if raw is None else cast(raw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=_env("config", None), help="economy JSON file")
    common.add_argument("--out", default=_env("out", "."), help="output directory")
    common.add_argument("--recipe", default=_env("recipe", None), help="named figure recipe")
    common.add_argument("--grid", type=int, default=_env("grid", 2001, int), help="table resolution")
    common.add_argument("--seed", type=int, default=_env("seed", 42, int), help="Monte Carlo seed")
    common.add_argument("--tol", type=float, default=_env("tol", 1e-12, float), help="quadrature tolerance")

    p = argparse.ArgumentParser(prog="rdushare", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command")
    e = sub.add_parser("envelope", parents=[common], help="convex envelope table and summary")
    e.add_argument("--weighting", help='JSON block, e.g. {"family":"prelec","alpha":0.5}')
    sub.add_parser("allocate", parents=[common], help="optimal payoffs on a U grid")
    sub.add_parser("density", parents=[common], help="atoms and densities of every payoff")
    c = sub.add_parser("ce", parents=[common], help="certainty equivalents")
    c.add_argument("--sweep", help="alpha=start:stop:step")
    n = sub.add_parser("nudge", parents=[common], help="optimal nudging effort")
    n.add_argument("--k", type=float, default=20.0, help="cost curvature")
    n.add_argument("--alpha-sweep", help="start:stop:step")
    sub.add_parser("sweep", parents=[common], help="run a figure recipe")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.grid < 2:
            raise dist.ConfigurationError("--grid must be at least 2")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command is None:
            if args.recipe is None:
                parser.print_help()
                return EXIT_CONFIG
            run_recipe(args.recipe, args, out)
        else:
            COMMANDS[args.command](args, out)
    except (dist.ConfigurationError, json.JSONDecodeError, FileNotFoundError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
