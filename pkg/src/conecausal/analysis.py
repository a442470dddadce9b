"""Causal functions on the grid: monotonicity, neutral points, strict values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .causal_graph import ConeField, Digraph, VertexSet
from .conedsl import parse_expr, evaluate, is_boolean, variables
from .errors import ArityError, DegenerateChord, ParseError
from .geometry import ManifoldGrid

STRICT, NEUTRAL_SINGULAR, NEUTRAL_FUTURE = 0, 1, 2
TAG_NAMES = {STRICT: "strict", NEUTRAL_SINGULAR: "neutral_singular", NEUTRAL_FUTURE: "neutral_future"}


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: ManifoldGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise ValueError(f"field has {values.size} values, grid has {self.grid.size} vertices")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def __getitem__(self, v):
        return self.values[v]

    @property
    def span(self) -> float:
        return float(self.values.max() - self.values.min())

    def default_tol(self) -> float:
        return 1e-9 * self.span


def eval_field(expr, grid: ManifoldGrid) -> ScalarField:
    """Evaluate an x-only expression (text or parsed tree) at every vertex."""
    node = parse_expr(expr, grid.dim) if isinstance(expr, str) else expr
    if any(kind == "v" for kind, _ in variables(node)):
        raise ArityError("scalar functions may not reference tangent components v1..vd")
    if is_boolean(node):
        raise ParseError("a scalar function must be numeric", 0, ["arithmetic expression"])
    coords = grid.coords
    vals = evaluate(node, [coords[:, j] for j in range(grid.dim)])
    return ScalarField(grid, np.broadcast_to(np.asarray(vals, dtype=float), (grid.size,)).copy())


def check_causal(f: ScalarField, G: Digraph, tol: float = 0.0):
    """Edges ``(x, y)`` along which ``f`` drops by more than ``tol``."""
    src, dst = G.edges()
    bad = f.values[dst] < f.values[src] - tol
    return list(zip(src[bad].tolist(), dst[bad].tolist()))


@dataclass(frozen=True, eq=False)
class NeutralityReport:
    tags: np.ndarray
    witness: np.ndarray  # -1 unless the tag is neutral_future
    tol: float

    def tag(self, v) -> str:
        return TAG_NAMES[int(self.tags[v])]

    @property
    def neutral(self) -> VertexSet:
        return VertexSet(self.tags != STRICT)

    @property
    def strict(self) -> VertexSet:
        return VertexSet(self.tags == STRICT)

    def counts(self) -> dict:
        return {name: int(np.count_nonzero(self.tags == code)) for code, name in TAG_NAMES.items()}


def _min_future(G: Digraph, values):
    """For each vertex, the smallest value (and its vertex) over the strict future.

    One pass over the condensation in reverse topological order. Inside a
    nontrivial component the vertex itself is excluded by keeping the two
    smallest members.
    """
    d = G.sccs
    c = d.count
    labels = d.labels
    order = np.argsort(values, kind="stable")
    # two smallest members per component
    first = np.full(c, -1)
    second = np.full(c, -1)
    for v in order:
        k = labels[v]
        if first[k] < 0:
            first[k] = v
        elif second[k] < 0:
            second[k] = v
    # best value strictly downstream of each component
    down_val = np.full(c, np.inf)
    down_arg = np.full(c, -1)
    indptr, indices = d.dag.indptr, d.dag.indices
    for k in d.order[::-1]:
        succ = indices[indptr[k] : indptr[k + 1]]
        if not succ.size:
            continue
        cand_val = np.minimum(values[first[succ]], down_val[succ])
        j = int(np.argmin(cand_val))
        s = succ[j]
        down_val[k] = cand_val[j]
        down_arg[k] = first[s] if values[first[s]] <= down_val[s] else down_arg[s]

    n = G.n
    best_val = down_val[labels].copy()
    best_arg = down_arg[labels].copy()
    nontriv = d.sizes[labels] >= 2
    v = np.arange(n)
    other = np.where(first[labels] == v, second[labels], first[labels])
    other = np.where(other < 0, v, other)
    other_val = np.where(nontriv, values[other], np.inf)
    take = nontriv & (other_val <= best_val)
    best_val[take] = other_val[take]
    best_arg[take] = other[take]
    return best_val, best_arg


def classify_neutral(f: ScalarField, G_base: Digraph, field: ConeField | None = None, tol: float | None = None) -> NeutralityReport:
    """Tag each vertex strict, neutral because singular, or neutral through its future."""
    if tol is None:
        tol = f.default_tol()
    values = f.values
    best_val, best_arg = _min_future(G_base, values)
    tags = np.full(G_base.n, STRICT, dtype=np.int8)
    witness = np.full(G_base.n, -1, dtype=np.int64)
    fut = best_val <= values + tol
    tags[fut] = NEUTRAL_FUTURE
    witness[fut] = best_arg[fut]
    singular = getattr(G_base, "singular_mask", None)
    if field is not None:
        singular = field.singular_mask(getattr(G_base, "stencil_radius", 1))
    if singular is not None:
        tags[singular] = NEUTRAL_SINGULAR
        witness[singular] = -1
    return NeutralityReport(tags, witness, float(tol))


@dataclass(frozen=True, eq=False)
class ValueBins:
    """Histogram of the range of ``f`` split into neutral, strict and empty bins.

    A bin is neutral when a neutral vertex takes a value in it. Bins that no
    vertex value falls into are unresolved at the grid resolution and count
    as neither neutral nor strict.
    """

    lo: float
    width: float
    neutral: np.ndarray  # per bin
    occupied: np.ndarray  # per bin
    hi: float

    def __len__(self):
        return self.neutral.size

    @property
    def strict(self) -> np.ndarray:
        return self.occupied & ~self.neutral

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.neutral.size) + 0.5) * self.width

    def bin_of(self, value) -> int:
        i = int(math.floor((value - self.lo) / self.width))
        return min(max(i, 0), self.neutral.size - 1)

    def is_strict_value(self, value) -> bool:
        """Outside the range every value is strict; inside, its bin must be strict."""
        if value < self.lo or value > self.hi:
            return True
        return bool(self.strict[self.bin_of(value)])

    def flags(self) -> list:
        return ["neutral" if n else "strict" if o else "empty" for n, o in zip(self.neutral, self.occupied)]


def strict_value_bins(f: ScalarField, report: NeutralityReport, w: float | None = None) -> ValueBins:
    lo, hi = float(f.values.min()), float(f.values.max())
    if w is None:
        w = (hi - lo) / 256 if hi > lo else 1.0
    if not w > 0:
        raise ValueError("bin width must be positive")
    nbins = max(1, int(math.ceil((hi - lo) / w)))
    idx = np.clip(np.floor((f.values - lo) / w).astype(np.int64), 0, nbins - 1)
    neutral = np.zeros(nbins, dtype=bool)
    neutral[idx[report.tags != STRICT]] = True
    occupied = np.zeros(nbins, dtype=bool)
    occupied[idx] = True
    return ValueBins(lo, float(w), neutral, occupied, hi)


def is_special(f: ScalarField, bins: ValueBins, gap: float | None = None) -> bool:
    """Every window of ``gap`` inside the range of ``f`` meets a strict bin."""
    if gap is None:
        gap = 8 * bins.width
    if gap < bins.width:
        raise ValueError("gap must be at least one bin width")
    if bins.hi - bins.lo < gap:
        return True
    strict = np.flatnonzero(bins.strict)
    if not strict.size:
        return False
    starts = bins.lo + strict * bins.width
    stops = np.minimum(starts + bins.width, bins.hi)
    holes = np.concatenate(([starts[0] - bins.lo], starts[1:] - stops[:-1], [bins.hi - stops[-1]]))
    return bool(np.all(holes < gap))


def is_time_function(f: ScalarField, report: NeutralityReport) -> bool:
    return not np.any(report.tags != STRICT)


@dataclass(frozen=True)
class CurveCheck:
    ok: bool
    first_violation: int | None = None
    skipped: tuple = ()

    def __bool__(self):
        return self.ok


def check_curve_causal(samples, field: ConeField, tol_angle: float = 0.0) -> CurveCheck:
    """Check each chord of a sampled curve against the cone at its start point."""
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("a curve needs at least two samples")
    grid = field.grid
    chords = grid.minimal_image(np.diff(pts, axis=0))
    norms = np.linalg.norm(chords, axis=1)
    skipped = tuple(int(i) for i in np.flatnonzero(norms == 0))
    if skipped:
        warnings.warn(f"{len(skipped)} repeated consecutive samples skipped", DegenerateChord, stacklevel=2)
    sample = field.directions(1)[len(grid.stencil(1)) :] if tol_angle > 0 else None
    cos_tol = math.cos(tol_angle)
    for i, (start, chord, norm) in enumerate(zip(pts[:-1], chords, norms)):
        if norm == 0:
            continue
        u = chord / norm
        if field.spec.members(start[None, :], u[None, :])[0, 0]:
            continue
        if sample is not None:
            inside = field.spec.members(start[None, :], sample)[0]
            if inside.any() and np.max(sample[inside] @ u) >= cos_tol - 1e-12:
                continue
        return CurveCheck(False, i, skipped)
    return CurveCheck(True, None, skipped)
