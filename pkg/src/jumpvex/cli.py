"""Command-line front end.

Every command first resolves its arguments into a plain JSON config (model
inlined, grid and sampler settings made explicit) and then runs from that
config alone. The config is stored in ``manifest.json`` next to the outputs, so
``jumpvex --replay manifest.json`` regenerates the same files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .analysis import chord_gap, check_convexity, compare_models, lcp_scan
from .mc import MCConfig, price_mc, simulate_path, write_paths_csv
from .model import (DomainError, check_conditions, counterexample_model, model_from_dict,
                    model_to_dict, truncate_model)
from .payoff import parse_payoff
from .pide import (Grid, SchemeConfig, default_grid, solve_bermudan, solve_pide,
                   step_doubling, write_surface_csv)

EXIT_OK, EXIT_ERROR, EXIT_UNMET = 0, 1, 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _x_grid(text: str) -> list[float]:
    """``geom:lo,hi,n``, ``lin:lo,hi,n`` or an explicit comma list."""
    kind, _, body = text.partition(":")
    if kind in ("geom", "lin"):
        lo, hi, n = _floats(body)
        f = np.geomspace if kind == "geom" else np.linspace
        return [float(v) for v in f(lo, hi, int(n))]
    return _floats(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_model(path: str) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read model file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc.msg} (line {exc.lineno})") from None
    try:
        model_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise CliError(f"invalid model in {path}: missing or bad field {exc}") from None
    return d


def _grid_dict(grid: Grid, anchor: float | None) -> dict:
    return {"spacing": grid.spacing, "x_min": grid.x_min, "x_max": grid.x_max,
            "n_x": grid.n_x, "n_t": grid.n_t, "T": grid.T, "anchor": anchor}


def _build_grid(d: dict) -> Grid:
    if d["spacing"] == "uniform":
        return Grid.uniform(d["x_min"], d["x_max"], d["n_x"], d["T"], d["n_t"])
    return Grid.geometric(d["x_min"], d["x_max"], d["n_x"], d["T"], d["n_t"], anchor=d["anchor"])


def _resolve_grid(args, model, x0: float, T: float, multiple_of: int = 1) -> dict:
    g = default_grid(model, x0, T, n_x=args.n_x, z_nodes=args.z_nodes, multiple_of=multiple_of)
    d = _grid_dict(g, x0)
    if args.n_t is not None:
        d["n_t"] = args.n_t
    if args.x_min is not None:
        d["x_min"] = args.x_min
    if args.x_max is not None:
        d["x_max"] = args.x_max
    if args.spacing is not None:
        d["spacing"] = args.spacing
    if not 0 < d["x_min"] < d["x_max"]:
        raise CliError("grid needs 0 < x_min < x_max")
    return d


def _scheme_dict(args) -> dict:
    return SchemeConfig(z_quadrature_nodes=args.z_nodes).to_dict()


def _mc_dict(args) -> dict:
    return MCConfig(args.n_paths, args.n_steps, args.seed, args.antithetic,
                    args.z_nodes).to_dict()


def _scheme(d: dict) -> SchemeConfig:
    return SchemeConfig(**d)


def _mc(d: dict) -> MCConfig:
    return MCConfig(**d)


# ---- argument parsing -----------------------------------------------------

def _grid_flags(p):
    p.add_argument("--n-x", type=int, default=401)
    p.add_argument("--n-t", type=int, default=None, help="time nodes (default: stability-based)")
    p.add_argument("--x-min", type=float, default=None)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--spacing", choices=("geometric", "uniform"), default=None)


def _mc_flags(p):
    p.add_argument("--n-paths", type=int, default=100_000)
    p.add_argument("--n-steps", type=int, default=256)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--antithetic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="jumpvex", description="Convexity and monotonicity of option prices "
                  "under jump-diffusion models.")
    top.add_argument("--version", action="version", version=f"jumpvex {__version__}")
    top.add_argument("--replay", metavar="MANIFEST", help="re-run a recorded manifest")
    top.add_argument("--out-dir", default=None, help="output directory (default: jumpvex_out)")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out-dir", default=None, dest="sub_out_dir")
        p.add_argument("--z-nodes", type=int, default=64, help="jump-label quadrature nodes")
        return p

    p = add("price", "price one contract by FD or MC")
    p.add_argument("--model", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--method", choices=("fd", "mc"), default="fd")
    p.add_argument("--sample-paths", type=int, default=16, help="paths written to paths.csv (mc)")
    _grid_flags(p)
    _mc_flags(p)

    p = add("check", "probe the structural conditions of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--x-samples", default="geom:0.01,100,41")
    p.add_argument("--t-samples", default="0,0.25,0.5,0.75,1")

    p = add("convexity", "solve the PIDE and test convexity of every slice")
    p.add_argument("--model", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--x0", type=float, default=1.0, help="grid centre")
    p.add_argument("--rel-tol", type=float, default=1e-6, help="tolerance relative to max|u|")
    _grid_flags(p)

    p = add("compare", "check the price ordering between two models")
    p.add_argument("--model-hi", required=True)
    p.add_argument("--model-lo", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--method", choices=("fd", "mc"), default="fd")
    _grid_flags(p)
    _mc_flags(p)

    p = add("lcp", "probe the local convexity-preservation condition")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--t", required=True)
    p.add_argument("--widths", required=True)

    p = add("counterexample", "reproduce the non-convex bump model")
    p.add_argument("--T", type=float, default=1.0)
    _mc_flags(p)

    p = add("truncate", "finite-activity approximation of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x-grid", required=True)
    p.add_argument("--t-grid", default="0")
    p.add_argument("--out", default="model_truncated.json")

    p = add("bermudan", "price a Bermudan contract on the FD grid")
    p.add_argument("--model", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--dates", required=True)
    p.add_argument("--x0", type=float, default=1.0)
    _grid_flags(p)
    return top


def _resolve(args) -> dict:
    cmd = args.command
    if cmd == "price":
        m = _load_model(args.model)
        model = model_from_dict(m)
        parse_payoff(args.payoff)
        cfg = {"model": m, "payoff": args.payoff, "x0": args.x0, "T": args.T,
               "method": args.method}
        if args.method == "fd":
            cfg["grid"] = _resolve_grid(args, model, args.x0, args.T)
            cfg["scheme"] = _scheme_dict(args)
        else:
            cfg["mc"] = _mc_dict(args)
            cfg["sample_paths"] = args.sample_paths
        return cfg
    if cmd == "check":
        return {"model": _load_model(args.model), "x_samples": _x_grid(args.x_samples),
                "t_samples": _floats(args.t_samples), "z_nodes": args.z_nodes}
    if cmd == "convexity":
        m = _load_model(args.model)
        parse_payoff(args.payoff)
        return {"model": m, "payoff": args.payoff, "T": args.T, "rel_tol": args.rel_tol,
                "grid": _resolve_grid(args, model_from_dict(m), args.x0, args.T),
                "scheme": _scheme_dict(args)}
    if cmd == "compare":
        hi, lo = _load_model(args.model_hi), _load_model(args.model_lo)
        parse_payoff(args.payoff)
        return {"model_hi": hi, "model_lo": lo, "payoff": args.payoff, "T": args.T,
                "x0": args.x0, "method": args.method,
                "grid": _resolve_grid(args, model_from_dict(hi), args.x0, args.T),
                "scheme": _scheme_dict(args), "mc": _mc_dict(args)}
    if cmd == "lcp":
        return {"model": _load_model(args.model), "x": _floats(args.x), "t": _floats(args.t),
                "widths": _floats(args.widths), "z_nodes": args.z_nodes}
    if cmd == "counterexample":
        return {"T": args.T, "mc": _mc_dict(args),
                "grid": {"spacing": "uniform", "x_min": 0.05, "x_max": 3.0, "n_x": 1181,
                         "n_t": 401, "T": args.T, "anchor": None},
                "scheme": _scheme_dict(args)}
    if cmd == "truncate":
        return {"model": _load_model(args.model), "n": args.n, "x_grid": _x_grid(args.x_grid),
                "t_grid": _floats(args.t_grid), "z_nodes": args.z_nodes, "out": args.out}
    if cmd == "bermudan":
        m = _load_model(args.model)
        parse_payoff(args.payoff)
        dates = _floats(args.dates)
        mult = 1
        for d in dates:
            if not 0 <= d <= args.T:
                raise CliError(f"exercise date {d} outside [0, T]")
            mult = math.lcm(mult, Fraction(d / args.T).limit_denominator(10_000).denominator)
        return {"model": m, "payoff": args.payoff, "T": args.T, "dates": dates,
                "grid": _resolve_grid(args, model_from_dict(m), args.x0, args.T, multiple_of=mult),
                "scheme": _scheme_dict(args)}
    raise CliError("no command given")


# ---- execution from a resolved config --------------------------------------

def _surface_csv(surface) -> str:
    import io
    buf = io.StringIO()
    write_surface_csv(surface, buf)
    return buf.getvalue()


def execute(command: str, cfg: dict) -> tuple[int, dict[str, str], str]:
    """Run a resolved config; returns exit code, ``{filename: contents}`` and stdout text."""
    files: dict[str, str] = {}
    code = EXIT_OK
    if command == "price":
        model, g = model_from_dict(cfg["model"]), parse_payoff(cfg["payoff"])
        if cfg["method"] == "fd":
            grid = _build_grid(cfg["grid"])
            coarse, fine, err = step_doubling(model, g, grid, _scheme(cfg["scheme"]))
            price = coarse.value(cfg["x0"])
            result = {"method": "fd", "price": price, "error_estimate": err,
                      "refined_price": fine.value(cfg["x0"])}
            files["surface.csv"] = _surface_csv(coarse)
            text = f"price {price!r} (fd, step-doubling error {err:.3g})"
        else:
            mc = _mc(cfg["mc"])
            est = price_mc(model, g, cfg["x0"], 0.0, cfg["T"], mc)
            result = {"method": "mc", **est.to_dict()}
            import io
            buf = io.StringIO()
            paths = [simulate_path(model, cfg["x0"], 0.0, cfg["T"], mc, i)
                     for i in range(cfg["sample_paths"])]
            write_paths_csv(paths, buf)
            files["paths.csv"] = buf.getvalue()
            text = f"price {est.mean!r} (mc, stderr {est.stderr:.3g})"
        files["result.json"] = _dumps(result)
        return code, files, text
    if command == "check":
        model = model_from_dict(cfg["model"])
        z = model.measure.quadrature(min(cfg["z_nodes"], 16))[0]
        rep = check_conditions(model, cfg["x_samples"], cfg["t_samples"], z)
        files["conditions.json"] = _dumps(rep.to_dict())
        fails = rep.failures
        return code, files, "all conditions pass" if not fails else "failing: " + ", ".join(fails)
    if command == "convexity":
        model, g = model_from_dict(cfg["model"]), parse_payoff(cfg["payoff"])
        s = solve_pide(model, g, _build_grid(cfg["grid"]), _scheme(cfg["scheme"]))
        rep = check_convexity(s, cfg["rel_tol"] * float(np.max(np.abs(s.values))))
        files["surface.csv"] = _surface_csv(s)
        files["convexity.json"] = rep.to_json()
        return code, files, rep.to_text()
    if command == "compare":
        hi, lo = model_from_dict(cfg["model_hi"]), model_from_dict(cfg["model_lo"])
        rep = compare_models(hi, lo, parse_payoff(cfg["payoff"]), _build_grid(cfg["grid"]),
                             _scheme(cfg["scheme"]), cfg["method"], x0=cfg["x0"],
                             mc_config=_mc(cfg["mc"]))
        files["comparison.json"] = rep.to_json()
        return (EXIT_OK if rep.hypotheses_met else EXIT_UNMET), files, rep.to_text()
    if command == "lcp":
        rep = lcp_scan(model_from_dict(cfg["model"]), cfg["x"], cfg["t"], cfg["widths"],
                       z_nodes=cfg["z_nodes"])
        files["lcp.json"] = rep.to_json()
        return code, files, rep.to_text()
    if command == "counterexample":
        return _counterexample(cfg)
    if command == "truncate":
        m = truncate_model(model_from_dict(cfg["model"]), cfg["n"], cfg["x_grid"],
                           cfg["t_grid"], cfg["z_nodes"])
        name = FsPath(cfg["out"]).name
        files[name] = _dumps(model_to_dict(m))
        return code, files, f"wrote {name} (jump mass {m.jump_mass(cfg['z_nodes']):.6g})"
    if command == "bermudan":
        model, g = model_from_dict(cfg["model"]), parse_payoff(cfg["payoff"])
        grid = _build_grid(cfg["grid"])
        s = solve_bermudan(model, g, grid, _scheme(cfg["scheme"]), cfg["dates"])
        euro = solve_pide(model, g, grid, _scheme(cfg["scheme"]))
        x0 = cfg["grid"]["anchor"]
        files["surface.csv"] = _surface_csv(s)
        res = {"bermudan": s.value(x0), "european": euro.value(x0), "x0": x0,
               "dates": cfg["dates"]}
        files["result.json"] = _dumps(res)
        return code, files, f"bermudan {res['bermudan']!r}, european {res['european']!r}"
    raise CliError(f"unknown command {command!r}")


def _counterexample(cfg: dict):
    model = counterexample_model()
    g = parse_payoff("put:K=1.0")
    grid = _build_grid(cfg["grid"])
    coarse, fine, _ = step_doubling(model, g, grid, _scheme(cfg["scheme"]))
    u = {x: coarse.value(x) for x in (0.5, 0.6, 1.0)}
    tol = 2.0 * abs(fine.value(0.6) - u[0.6])
    conv = check_convexity(coarse, tol)
    est = price_mc(model, g, 0.6, 0.0, cfg["T"], _mc(cfg["mc"]))
    chord = u[0.5] + (u[1.0] - u[0.5]) * (0.6 - 0.5) / 0.5
    report = {
        "u": {"0.5": u[0.5], "0.6": u[0.6], "1.0": u[1.0]},
        "chord_at_0.6": chord,
        "fd_gap": chord_gap(coarse, 0.5, 0.6, 1.0),
        "fd_tolerance": tol,
        "mc": est.to_dict(),
        "mc_gap": est.mean - chord,
        "is_convex": conv.is_convex,
        "witness": {"x": conv.location[0], "tau": conv.location[1],
                    "min_second_difference": conv.min_second_difference,
                    "chord": [0.5, 0.6, 1.0]},
        "convexity": conv.to_dict(),
    }
    files = {"surface.csv": _surface_csv(coarse), "counterexample.json": _dumps(report)}
    text = (f"u(0.5)={u[0.5]!r} u(0.6)={u[0.6]!r} u(1.0)={u[1.0]!r}; chord gap at 0.6 "
            f"{report['fd_gap']:.6g} (fd), {report['mc_gap']:.6g} +- {est.stderr:.2g} (mc); "
            f"convex={conv.is_convex}, witness x={conv.location[0]:.6g}")
    return EXIT_OK, files, text


def _write(out_dir: FsPath, command: str, cfg: dict, code: int, files: dict, started: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, content in files.items():
        p = out_dir / name
        p.write_text(content)
        paths.append(str(p))
    manifest = {"command": command, "version": __version__, "config": cfg,
                "outputs": paths, "exit_code": code,
                "duration_seconds": round(time.perf_counter() - started, 6)}
    (out_dir / "manifest.json").write_text(_dumps(manifest))


def main(argv: list[str] | None = None) -> int:
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        out = getattr(args, "sub_out_dir", None) or args.out_dir
        if args.replay:
            if args.command:
                raise CliError("--replay cannot be combined with a command")
            try:
                manifest = json.loads(FsPath(args.replay).read_text())
                command, cfg = manifest["command"], manifest["config"]
            except (OSError, ValueError, KeyError) as exc:
                raise CliError(f"unreadable manifest {args.replay}: {exc}") from None
            out_dir = FsPath(out) if out else FsPath(args.replay).parent
        else:
            if not args.command:
                raise CliError("no command given (see --help)")
            command = args.command
            cfg = _resolve(args)
            out_dir = FsPath(out or "jumpvex_out")
        code, files, text = execute(command, cfg)
        _write(out_dir, command, cfg, code, files, started)
        print(text)
        return code
    except (CliError, DomainError, ValueError, TypeError, KeyError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"jumpvex: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
