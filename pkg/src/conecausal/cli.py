"""Command line front end: ``conecausal VERB --scene FILE [options]``.

Reports go to stdout as JSON (or to ``--out``), fields are written as CSV.
Exit codes: 0 success, 2 invalid scene or input, 3 mathematical refusal,
4 internal error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .analysis import (
    TAG_NAMES,
    ScalarField,
    check_causal,
    classify_neutral,
    eval_field,
    is_special,
    is_time_function,
    strict_value_bins,
)
from .causal_graph import BASE, KIND_NAMES, Enlargement, is_k_causal, k_future, reach, recurrent_set
from .errors import ConeCausalError, NoStrictBin, NotCausal, NotStrict, ParseError, SceneError, UnknownField
from .geometry import ManifoldGrid
from .lyapunov import approximate, complete_lyapunov, smooth_field, verify_lyapunov
from .scene import Scene, load_scene, validate_scene

EXIT_OK, EXIT_SCENE, EXIT_REFUSAL, EXIT_INTERNAL = 0, 2, 3, 4


# --------------------------------------------------------------------------
# Deterministic output


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def render_json(obj, indent=0) -> str:
    """JSON with floats at 17 significant digits and sorted keys."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{render_json(str(k))}: {render_json(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(render_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + render_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    raise TypeError(f"cannot render {type(obj).__name__}")


def write_csv(path, grid: ManifoldGrid, values, integer=False):
    """Rows in vertex order: coordinates then value."""
    coords = grid.coords
    header = ",".join([f"x{i + 1}" for i in range(grid.dim)] + ["value"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, val in zip(coords, np.asarray(values)):
            cells = [format(float(c), ".17g") for c in row]
            cells.append(str(int(val)) if integer else format(float(val), ".17g"))
            fh.write(",".join(cells) + "\n")


def emit(doc, args):
    text = render_json(doc) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{args.verb}.json"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


# --------------------------------------------------------------------------
# Helpers


def _params(scene: Scene, args, **extra) -> dict:
    doc = {
        "scene": scene.to_dict(),
        "stencil": _stencil(scene, args),
        "thetas": _thetas(scene, args),
        "r": scene.r,
        "strict": bool(args.strict),
    }
    doc.update(extra)
    return doc


def _stencil(scene, args) -> int:
    return args.stencil if args.stencil is not None else scene.stencil


def _thetas(scene, args) -> list:
    return list(args.theta) if args.theta else list(scene.thetas)


def _function(scene: Scene, name: str) -> ScalarField:
    if name in scene.functions:
        return eval_field(scene.functions[name], scene.grid)
    try:
        return eval_field(name, scene.grid)
    except ParseError:
        raise UnknownField(f"unknown function {name!r}; scene defines {sorted(scene.functions)}") from None


def _require_out(args):
    if not args.out:
        raise SceneError(f"{args.verb} writes fields; pass --out DIR")
    os.makedirs(args.out, exist_ok=True)


def _tol(scene, f):
    t = scene.tolerances.get("tol")
    return f.default_tol() if t is None else float(t)


# --------------------------------------------------------------------------
# Verbs


def cmd_analyze(scene: Scene, args) -> dict:
    field = scene.field
    s = _stencil(scene, args)
    kinds = field.kinds(s)
    G0 = field.graph(BASE, s)
    d0 = G0.sccs
    sweep = []
    for theta in _thetas(scene, args):
        G = field.graph(Enlargement(theta, scene.r), s)
        d = G.sccs
        R = recurrent_set(G)
        entry = {
            "theta": theta,
            "edges": G.num_edges,
            "scc_count": d.count,
            "nontrivial_sccs": int(np.count_nonzero(d.nontrivial)),
            "largest_scc": int(d.sizes.max()),
            "dag_depth": int(d.level.max()),
            "recurrent_size": len(R),
            "stably_causal": (not R) if theta > 0 else None,
        }
        sweep.append(entry)
        if args.out:
            write_csv(os.path.join(args.out, f"recurrent_theta{theta:g}.csv"), scene.grid, R.mask, integer=True)
    return {
        "verb": "analyze",
        "parameters": _params(scene, args),
        "vertices": scene.grid.size,
        "kinds": {name: int(np.count_nonzero(kinds == code)) for code, name in KIND_NAMES.items()},
        "base": {"edges": G0.num_edges, "scc_count": d0.count, "nontrivial_sccs": int(np.count_nonzero(d0.nontrivial))},
        "k_causal": is_k_causal(field, s),
        "sweep": sweep,
    }


def cmd_futures(scene: Scene, args) -> dict:
    if args.point is None:
        raise SceneError("futures needs --point")
    field = scene.field
    s = _stencil(scene, args)
    x = scene.grid.nearest_vertex([float(c) for c in args.point.split(",")])
    relations = args.relation or ["J", "K", "F"]
    results = []
    for rel in relations:
        if rel in ("J", "K"):
            # both are forward reach in the base graph at grid resolution
            S = k_future(field, x, s) if rel == "K" else reach(field.graph(BASE, s), x)
            results.append({"relation": rel, "theta": 0.0, "size": len(S)})
            if args.out:
                write_csv(os.path.join(args.out, f"future_{rel}.csv"), scene.grid, S.mask, integer=True)
        else:
            for theta in sorted(_thetas(scene, args), reverse=True):
                S = reach(field.graph(Enlargement(theta, scene.r), s), x)
                results.append({"relation": "F", "theta": theta, "size": len(S)})
                if args.out:
                    write_csv(os.path.join(args.out, f"future_F_theta{theta:g}.csv"), scene.grid, S.mask, integer=True)
    return {
        "verb": "futures",
        "parameters": _params(scene, args, point=args.point),
        "vertex": x,
        "vertex_coordinates": scene.grid.coordinates(x).tolist(),
        "futures": results,
    }


def _classify(scene: Scene, f: ScalarField, G0):
    tol = _tol(scene, f)
    bad = check_causal(f, G0, tol)
    if bad:
        raise NotCausal(bad)
    report = classify_neutral(f, G0, tol=tol)
    bins = strict_value_bins(f, report, scene.tolerances.get("bin_width"))
    return report, bins


def cmd_classify(scene: Scene, args) -> dict:
    s = _stencil(scene, args)
    f = _function(scene, args.function)
    G0 = scene.field.graph(BASE, s)
    report, bins = _classify(scene, f, G0)
    gap = scene.tolerances.get("gap")
    if args.out:
        write_csv(os.path.join(args.out, "tags.csv"), scene.grid, report.tags, integer=True)
    flags = bins.flags()
    return {
        "verb": "classify",
        "parameters": _params(scene, args, function=args.function, tol=report.tol),
        "tag_codes": {str(k): v for k, v in TAG_NAMES.items()},
        "counts": report.counts(),
        "bins": {
            "lo": bins.lo,
            "hi": bins.hi,
            "width": bins.width,
            "count": len(bins),
            "strict": flags.count("strict"),
            "neutral": flags.count("neutral"),
            "empty": flags.count("empty"),
        },
        "is_special": is_special(f, bins, gap),
        "is_time_function": is_time_function(f, report),
    }


def cmd_approx(scene: Scene, args) -> dict:
    if args.eps is None:
        raise SceneError("approx needs --eps")
    s = _stencil(scene, args)
    theta = _thetas(scene, args)[0]
    f = _function(scene, args.function)
    field = scene.field
    G0 = field.graph(BASE, s)
    Gt = field.graph(Enlargement(theta, scene.r), s)
    bins = None
    if f.span > 0:
        _, bins = _classify(scene, f, G0)
    tau, report = approximate(
        f, args.eps, Gt, G0,
        add_regularizer=args.regularize,
        bins=bins,
        strict=args.strict,
        delta_0=scene.tolerances["delta_0"],
        workers=args.threads,
    )
    smoothed = None
    if args.smooth:
        tau_s = smooth_field(tau, args.smooth)
        smoothed = verify_lyapunov(tau_s, G0, recurrent_set(Gt), scene.tolerances["delta_0"]).summary()
    if args.out:
        write_csv(os.path.join(args.out, "tau.csv"), scene.grid, tau.values)
        write_csv(os.path.join(args.out, "error.csv"), scene.grid, np.abs(tau.values - f.values))
    return {
        "verb": "approx",
        "parameters": _params(scene, args, function=args.function, eps=args.eps, theta=theta,
                              regularize=bool(args.regularize), smooth=args.smooth),
        "report": report.summary(),
        "smoothed": smoothed,
    }


def _read_field_csv(path, grid: ManifoldGrid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (grid.size, grid.dim + 1):
        raise SceneError(f"{path}: expected {grid.size} rows of {grid.dim + 1} columns")
    return ScalarField(grid, data[:, -1])


def cmd_verify(scene: Scene, args) -> dict:
    s = _stencil(scene, args)
    field = scene.field
    G0 = field.graph(BASE, s)
    if args.field:
        tau = _read_field_csv(args.field, scene.grid)
        source = args.field
    elif args.function:
        tau = _function(scene, args.function)
        source = args.function
    else:
        theta = _thetas(scene, args)[0]
        tau = complete_lyapunov(field.graph(Enlargement(theta, scene.r), s))
        source = "complete_lyapunov"
    theta = _thetas(scene, args)[0]
    R = recurrent_set(field.graph(Enlargement(theta, scene.r), s)) if theta > 0 else recurrent_set(G0)
    report = verify_lyapunov(tau, G0, R, scene.tolerances["delta_0"])
    return {
        "verb": "verify",
        "parameters": _params(scene, args, source=source, theta=theta),
        "recurrent_size": len(R),
        "report": report.summary(),
        "passed": report.passed,
    }


def cmd_export(scene: Scene, args) -> dict:
    _require_out(args)
    name = args.field or args.function
    if not name:
        raise SceneError("export needs --field NAME")
    s = _stencil(scene, args)
    theta = _thetas(scene, args)[0]
    field = scene.field
    integer = False
    if name == "kinds":
        values, integer = field.kinds(s), True
    elif name == "recurrent":
        values, integer = recurrent_set(field.graph(Enlargement(theta, scene.r), s)).mask, True
    elif name == "complete_lyapunov":
        values = complete_lyapunov(field.graph(Enlargement(theta, scene.r), s)).values
    elif name in scene.functions:
        values = eval_field(scene.functions[name], scene.grid).values
    else:
        raise UnknownField(f"unknown field {name!r}; choose kinds, recurrent, complete_lyapunov or one of {sorted(scene.functions)}")
    path = os.path.join(args.out, f"{name}.csv")
    write_csv(path, scene.grid, values, integer=integer)
    return {"verb": "export", "parameters": _params(scene, args, field=name), "path": path, "rows": scene.grid.size}


VERBS = {
    "analyze": cmd_analyze,
    "futures": cmd_futures,
    "classify": cmd_classify,
    "approx": cmd_approx,
    "verify": cmd_verify,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conecausal", description="Discrete causality analysis of cone fields.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--scene", required=True, help="scene JSON file or fixture name")
    p.add_argument("--theta", type=float, action="append", help="enlargement angle in radians (repeatable)")
    p.add_argument("--stencil", type=int, help="stencil radius, overrides the scene")
    p.add_argument("--eps", type=float, help="approximation width for approx")
    p.add_argument("--out", help="directory for the JSON report and CSV fields")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-slab steps")
    p.add_argument("--function", help="name of a scene function (or an x-only expression)")
    p.add_argument("--field", help="field name for export, or a CSV file for verify")
    p.add_argument("--point", help="comma-separated coordinates for futures")
    p.add_argument("--relation", action="append", choices=["J", "K", "F"], help="relation for futures (repeatable)")
    p.add_argument("--regularize", action="store_true", help="add eps times the complete Lyapunov function")
    p.add_argument("--smooth", type=int, default=0, help="also verify a kernel-smoothed copy with this radius")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        args.threads = 1
    try:
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error", RuntimeWarning)
            scene = load_scene(args.scene)
            diags = validate_scene(scene, strict=args.strict)
            if args.function is None and args.verb in ("classify", "approx"):
                raise SceneError(f"{args.verb} needs --function")
            doc = VERBS[args.verb](scene, args)
            doc["scene_diagnostics"] = diags[:50]
    except (NotStrict, NoStrictBin, NotCausal) as exc:
        doc = {"verb": args.verb, "refusal": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NoStrictBin):
            doc["slab"] = exc.k
        if isinstance(exc, NotCausal):
            doc["violations"] = [list(e) for e in exc.violations[:100]]
            doc["violation_count"] = len(exc.violations)
        emit(doc, args)
        return EXIT_REFUSAL
    except (ConeCausalError, ValueError) as exc:
        doc = {"verb": args.verb, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SceneError):
            doc["diagnostics"] = exc.diagnostics[:50]
        sys.stderr.write(render_json(doc) + "\n")
        return EXIT_SCENE
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL
    emit(doc, args)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
