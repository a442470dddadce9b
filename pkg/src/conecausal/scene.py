"""JSON scene files: grid, cone predicate, named functions and run defaults."""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

from .causal_graph import BORDERLINE, KIND_NAMES, ConeField
from .conedsl import ConeSpec, convexity_spot_check, parse_expr, sphere_directions, validate_homogeneity, variables
from .errors import ConeCausalError, ConvexityWarning, InvalidFactor, ParseError, SceneError
from .geometry import ManifoldGrid

DEFAULT_TOLERANCES = {"tol": None, "bin_width": None, "gap": None, "delta_0": 1e-6, "gamma_min": 1e-3}
FIXTURES = ("example1", "example2", "minkowski")


@dataclass
class Scene:
    grid: ManifoldGrid
    cone: str
    functions: dict = field(default_factory=dict)
    thetas: tuple = (0.1,)
    r: int = 0
    stencil: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    samples: int | None = None
    name: str = ""

    @cached_property
    def spec(self) -> ConeSpec:
        return ConeSpec.parse(self.cone, self.grid.dim)

    @cached_property
    def field(self) -> ConeField:
        return ConeField(self.spec, self.grid, samples=self.samples, gamma_min=self.tolerances["gamma_min"])

    def to_dict(self) -> dict:
        out = {
            "grid": {"factors": [f.to_dict() for f in self.grid.factors]},
            "cone": self.cone,
            "functions": dict(self.functions),
            "enlargement": {"thetas": list(self.thetas), "r": self.r},
            "stencil": self.stencil,
            "tolerances": dict(self.tolerances),
        }
        if self.samples is not None:
            out["samples"] = self.samples
        if self.name:
            out["name"] = self.name
        return out


def scene_from_dict(doc: dict, name: str = "") -> Scene:
    if not isinstance(doc, dict):
        raise SceneError("scene must be a JSON object")
    try:
        factors = doc["grid"]["factors"]
        cone = doc["cone"]
    except (KeyError, TypeError) as exc:
        raise SceneError(f"scene is missing required key {exc}") from None
    try:
        grid = ManifoldGrid(factors)
    except (InvalidFactor, TypeError, ValueError) as exc:
        raise SceneError(f"invalid grid: {exc}") from None
    enl = doc.get("enlargement", {})
    thetas = tuple(float(t) for t in enl.get("thetas", [0.1]))
    r = int(enl.get("r", 0))
    stencil = int(doc.get("stencil", 1))
    if r < 0 or stencil < 1 or any(t < 0 for t in thetas):
        raise SceneError("need r >= 0, stencil >= 1 and nonnegative thetas")
    tolerances = dict(DEFAULT_TOLERANCES)
    unknown = set(doc.get("tolerances", {})) - set(tolerances)
    if unknown:
        raise SceneError(f"unknown tolerance keys: {sorted(unknown)}")
    tolerances.update(doc.get("tolerances", {}))
    functions = doc.get("functions", {})
    if not isinstance(functions, dict) or not all(isinstance(v, str) for v in functions.values()):
        raise SceneError("functions must map names to expression strings")
    samples = doc.get("samples")
    return Scene(grid, str(cone), dict(functions), thetas, r, stencil, tolerances,
                 None if samples is None else int(samples), doc.get("name", name))


def fixture_path(name: str):
    return resources.files("conecausal") / "scenes" / f"{name}.json"


def load_scene(path) -> Scene:
    """Read a scene file; bare fixture names such as ``minkowski`` are accepted too."""
    path = str(path)
    if not os.path.exists(path) and path in FIXTURES:
        text = fixture_path(path).read_text()
        name = path
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise SceneError(f"cannot read scene: {exc}") from None
        name = os.path.splitext(os.path.basename(path))[0]
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene is not valid JSON: {exc}") from None
    return scene_from_dict(doc, name)


def _probe_points(grid: ManifoldGrid, count=64):
    idx = np.linspace(0, grid.size - 1, min(count, grid.size)).round().astype(np.int64)
    return grid.coords[idx]


def validate_scene(scene: Scene, strict: bool = False) -> list:
    """Parse and sanity-check a scene before any analysis.

    Hard failures (parse errors, non-homogeneous predicates) raise
    SceneError. Convexity counterexamples and borderline cones are returned
    as diagnostics with a ConvexityWarning, or raise under ``strict``.
    """
    diags = []
    try:
        spec = scene.spec
    except ParseError as exc:
        raise SceneError(f"cone: {exc}", [{"kind": "parse", "offset": exc.offset}]) from None
    for fname, text in scene.functions.items():
        try:
            node = parse_expr(text, scene.grid.dim)
        except ParseError as exc:
            raise SceneError(f"function {fname!r}: {exc}", [{"kind": "parse", "function": fname, "offset": exc.offset}]) from None
        if any(kind == "v" for kind, _ in variables(node)):
            raise SceneError(f"function {fname!r} references tangent components")

    xs = _probe_points(scene.grid)
    dirs = sphere_directions(scene.grid.dim, 32 if scene.grid.dim > 1 else 2)
    homog = validate_homogeneity(spec, xs, dirs)
    if not homog:
        raise SceneError("cone predicate is not positively homogeneous in v",
                         [{"kind": "homogeneity", **c} for c in homog.counterexamples])
    for c in convexity_spot_check(spec, xs, scene.field.directions(scene.stencil)):
        diags.append({"kind": "convexity", **c})
    kinds = scene.field.kinds(scene.stencil)
    nb = int(np.count_nonzero(kinds == BORDERLINE))
    if nb:
        sample = np.flatnonzero(kinds == BORDERLINE)[:5]
        diags.append({
            "kind": KIND_NAMES[BORDERLINE],
            "count": nb,
            "examples": [scene.grid.coords[v].tolist() for v in sample],
        })
    if diags:
        msg = f"{len(diags)} cone diagnostic(s): " + ", ".join(sorted({d['kind'] for d in diags}))
        if strict:
            raise SceneError(msg, diags)
        warnings.warn(msg, ConvexityWarning, stacklevel=2)
    return diags


__all__ = ["Scene", "scene_from_dict", "load_scene", "validate_scene", "fixture_path", "FIXTURES", "ConeCausalError"]
