"""Discrete causal structure of a cone field on a sampled manifold.

An edge ``x -> y`` is a stencil step whose direction is admitted by the
(possibly enlarged) cone at ``x``. Reachability in this graph plays the role
of the causal future, strongly connected components carry recurrence, and
the longest-path grading of the condensation DAG is reused by the Lyapunov
constructions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .conedsl import ConeClass, ConeSpec, classify_member_mask, sphere_directions, variables
from .errors import BorderlineRegular, ResolutionWarning
from .geometry import ManifoldGrid

DEGENERATE, REGULAR, SINGULAR, BORDERLINE = 0, 1, 2, 3
KIND_NAMES = {DEGENERATE: "degenerate", REGULAR: "regular", SINGULAR: "singular", BORDERLINE: "borderline"}
DEFAULT_SAMPLES = {1: 2, 2: 256, 3: 2048, 4: 4096}


@dataclass(frozen=True)
class Enlargement:
    theta: float = 0.0
    r: int = 0

    def __post_init__(self):
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be a finite nonnegative angle, got {self.theta}")
        if int(self.r) != self.r or self.r < 0:
            raise ValueError(f"r must be a nonnegative integer, got {self.r}")

    @property
    def is_base(self) -> bool:
        return self.theta == 0 and self.r == 0

    def __le__(self, other):
        return self.theta <= other.theta and self.r <= other.r


BASE = Enlargement()


class VertexSet:
    """Set of vertex ids stored as a boolean mask over ``0..n-1``."""

    __slots__ = ("mask",)

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool)

    @classmethod
    def empty(cls, n):
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def full(cls, n):
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def of(cls, n, ids):
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)] = True
        return cls(mask)

    @property
    def n(self):
        return self.mask.size

    def __len__(self):
        return int(np.count_nonzero(self.mask))

    def __bool__(self):
        return bool(self.mask.any())

    def __contains__(self, v):
        return 0 <= v < self.mask.size and bool(self.mask[v])

    def __iter__(self):
        return iter(int(i) for i in np.flatnonzero(self.mask))

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __eq__(self, other):
        if isinstance(other, VertexSet):
            return np.array_equal(self.mask, other.mask)
        return NotImplemented

    __hash__ = None

    def __or__(self, other):
        return VertexSet(self.mask | other.mask)

    def __and__(self, other):
        return VertexSet(self.mask & other.mask)

    def __sub__(self, other):
        return VertexSet(self.mask & ~other.mask)

    def __xor__(self, other):
        return VertexSet(self.mask ^ other.mask)

    def __invert__(self):
        return VertexSet(~self.mask)

    def __le__(self, other):
        return not np.any(self.mask & ~other.mask)

    def __ge__(self, other):
        return other <= self

    def to_bits(self) -> bytes:
        return np.packbits(self.mask, bitorder="little").tobytes()

    def __repr__(self):
        return f"VertexSet({len(self)}/{self.n})"


def _as_vertex_set(n, sources):
    if isinstance(sources, VertexSet):
        return sources
    if isinstance(sources, (int, np.integer)):
        return VertexSet.of(n, [int(sources)])
    return VertexSet.of(n, sources)


def _gather(indptr, indices, nodes):
    """Concatenated adjacency lists of ``nodes``."""
    starts = indptr[nodes]
    counts = indptr[nodes + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=indices.dtype)
    offs = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    return indices[offs + np.arange(total)]


def _csr(n, src, dst):
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst.astype(np.int64), order


class Digraph:
    """Directed graph with sorted out- and in-adjacency (CSR)."""

    def __init__(self, n, src, dst):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        self.n = int(n)
        self.indptr, self.indices, self._order = _csr(self.n, src, dst)
        self.in_indptr, self.in_indices, _ = _csr(self.n, dst, src)
        self.src = src[self._order]

    @classmethod
    def from_edges(cls, n, edges):
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        edges = np.unique(edges, axis=0)
        return cls(n, edges[:, 0], edges[:, 1])

    @property
    def num_edges(self):
        return int(self.indices.size)

    def edges(self):
        """``(src, dst)`` arrays, sorted by source then target."""
        return self.src, self.indices

    def out_neighbors(self, v):
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def in_neighbors(self, v):
        return self.in_indices[self.in_indptr[v] : self.in_indptr[v + 1]]

    def out_degree(self):
        return np.diff(self.indptr)

    def has_edge(self, v, w):
        nb = self.out_neighbors(v)
        i = np.searchsorted(nb, w)
        return bool(i < nb.size and nb[i] == w)

    @cached_property
    def sccs(self) -> SccDecomposition:
        return scc(self)


@dataclass(frozen=True, eq=False)
class SccDecomposition:
    labels: np.ndarray  # component id per vertex
    count: int
    sizes: np.ndarray
    nontrivial: np.ndarray  # per component: size >= 2 or self-loop
    dag: Digraph  # condensation
    order: np.ndarray  # topological order of components
    level: np.ndarray  # longest-path index from a source component

    def same_component(self, v, w) -> bool:
        return bool(self.labels[v] == self.labels[w])


def _levels(dag: Digraph):
    """Kahn's algorithm one layer at a time; the layer is the longest-path index."""
    c = dag.n
    indeg = np.bincount(dag.indices, minlength=c)
    level = np.full(c, -1, dtype=np.int64)
    frontier = np.flatnonzero(indeg == 0)
    order = []
    depth = 0
    while frontier.size:
        level[frontier] = depth
        order.append(frontier)
        nb = _gather(dag.indptr, dag.indices, frontier)
        if nb.size:
            indeg -= np.bincount(nb, minlength=c)
            cand = np.unique(nb)
            frontier = cand[indeg[cand] == 0]
        else:
            frontier = nb
        depth += 1
    order = np.concatenate(order) if order else np.empty(0, dtype=np.int64)
    if order.size != c:
        raise RuntimeError("condensation is not acyclic")
    return order, level


def scc(G: Digraph) -> SccDecomposition:
    n = G.n
    adj = csr_matrix((np.ones(G.num_edges, dtype=np.int8), G.indices, G.indptr), shape=(n, n))
    count, labels = connected_components(adj, directed=True, connection="strong")
    labels = labels.astype(np.int64)
    sizes = np.bincount(labels, minlength=count)
    src, dst = G.edges()
    ls, ld = labels[src], labels[dst]
    nontrivial = sizes >= 2
    loops = src == dst
    nontrivial[ls[loops]] = True
    cross = ls != ld
    pairs = np.unique(np.column_stack([ls[cross], ld[cross]]), axis=0)
    dag = Digraph(count, pairs[:, 0], pairs[:, 1])
    order, level = _levels(dag)
    return SccDecomposition(labels, count, sizes, nontrivial, dag, order, level)


class CausalGraph(Digraph):
    def __init__(self, grid: ManifoldGrid, src, dst, offset_ids, enlargement: Enlargement, s: int, singular_mask, kinds):
        super().__init__(grid.size, src, dst)
        self.grid = grid
        self.enlargement = enlargement
        self.stencil_radius = s
        self.offset_ids = np.asarray(offset_ids, dtype=np.int64)[self._order]
        self.edge_length = grid.stencil(s).norms[self.offset_ids]
        self.singular_mask = np.asarray(singular_mask, dtype=bool)
        self.kinds = kinds

    @property
    def theta(self):
        return self.enlargement.theta

    def __repr__(self):
        e = self.enlargement
        return f"CausalGraph(N={self.n}, edges={self.num_edges}, theta={e.theta}, r={e.r}, s={self.stencil_radius})"


class ConeField:
    """A cone predicate on a grid, with cached membership tables and graphs.

    The direction sample at each vertex is the unit stencil directions
    followed by ``samples`` quasi-uniform sphere directions.
    """

    def __init__(self, spec: ConeSpec, grid: ManifoldGrid, samples: int | None = None, gamma_min: float = 1e-3):
        if spec.dim != grid.dim:
            raise ValueError(f"cone dimension {spec.dim} does not match grid dimension {grid.dim}")
        self.spec = spec
        self.grid = grid
        self.samples = samples or DEFAULT_SAMPLES[grid.dim]
        self.gamma_min = gamma_min
        self._tables = {}
        self._graphs = {}

    @classmethod
    def from_text(cls, text, grid, **kw):
        return cls(ConeSpec.parse(text, grid.dim), grid, **kw)

    def directions(self, s):
        st = self.grid.stencil(s)
        return np.vstack([st.directions, sphere_directions(self.grid.dim, self.samples)])

    def _table(self, s):
        """Unique membership patterns, per-vertex pattern index, and pattern classes."""
        if s in self._tables:
            return self._tables[s]
        dirs = self.directions(s)
        used = sorted({i - 1 for kind, i in variables(self.spec.expr) if kind == "x"})
        coords = self.grid.coords
        if used:
            key, first, point_inv = np.unique(coords[:, used], axis=0, return_index=True, return_inverse=True)
            members = self.spec.members(coords[first], dirs)
        else:
            point_inv = np.zeros(self.grid.size, dtype=np.int64)
            members = self.spec.members(coords[:1], dirs)
        patterns, pat_inv = np.unique(members, axis=0, return_inverse=True)
        inverse = pat_inv.reshape(-1)[point_inv.reshape(-1)]
        classes = []
        kinds = np.empty(len(patterns), dtype=np.int8)
        for i, row in enumerate(patterns):
            try:
                cls = classify_member_mask(row, dirs, self.gamma_min)
            except BorderlineRegular:
                # recorded per vertex; scene validation decides whether to refuse
                cls = ConeClass("borderline", None, None)
            classes.append(cls)
            kinds[i] = {"degenerate": DEGENERATE, "regular": REGULAR, "singular": SINGULAR, "borderline": BORDERLINE}[cls.kind]
        self._tables[s] = (patterns, inverse, classes, kinds)
        return self._tables[s]

    def kinds(self, s=1) -> np.ndarray:
        """Per-vertex cone kind code (see ``KIND_NAMES``)."""
        _, inverse, _, kinds = self._table(s)
        return kinds[inverse]

    def cone_class(self, v, s=1) -> ConeClass:
        _, inverse, classes, _ = self._table(s)
        return classes[inverse[v]]

    def singular_mask(self, s=1):
        return self.kinds(s) == SINGULAR

    def member_directions(self, v, s=1) -> np.ndarray:
        """Sampled unit directions in the cone at vertex ``v``."""
        patterns, inverse, _, _ = self._table(s)
        return self.directions(s)[patterns[inverse[v]]]

    def admitted(self, theta: float, s: int) -> np.ndarray:
        """(N, K) mask of stencil offsets admitted at each vertex before spatial fattening."""
        patterns, inverse, _, kinds = self._table(s)
        st = self.grid.stencil(s)
        K = len(st)
        if theta == 0:
            adm = patterns[:, :K].copy()
        else:
            close = self.directions(s) @ st.directions.T >= math.cos(theta) - 1e-12
            adm = (patterns.astype(np.float32) @ close.astype(np.float32)) > 0
        adm[kinds == SINGULAR] = True
        thin = (kinds != DEGENERATE) & ~adm.any(axis=1)
        if thin.any():
            count = int(np.count_nonzero(thin[inverse]))
            warnings.warn(
                f"{count} vertices have a nonempty sampled cone but no admitted stencil direction "
                f"(theta={theta}, s={s})",
                ResolutionWarning,
                stacklevel=3,
            )
        return adm[inverse]

    def graph(self, enlargement: Enlargement = BASE, s: int = 1) -> CausalGraph:
        key = (enlargement, s)
        if key not in self._graphs:
            self._graphs[key] = build_graph(self, enlargement, s)
        return self._graphs[key]


def _dilate(grid: ManifoldGrid, adm, r):
    if r == 0:
        return adm
    K = adm.shape[1]
    cube = adm.reshape(grid.shape + (K,))
    modes = ["wrap" if f.periodic else "constant" for f in grid.factors] + ["constant"]
    size = (2 * r + 1,) * grid.dim + (1,)
    return ndimage.maximum_filter(cube, size=size, mode=modes, cval=False).reshape(adm.shape)


def build_graph(field: ConeField, E: Enlargement = BASE, s: int = 1) -> CausalGraph:
    if s < 1:
        raise ValueError("stencil radius must be >= 1")
    grid = field.grid
    st = grid.stencil(s)
    adm = _dilate(grid, field.admitted(E.theta, s), E.r)
    adm &= st.targets >= 0
    src, k = np.nonzero(adm)
    dst = st.targets[src, k]
    return CausalGraph(grid, src, dst, k, E, s, field.singular_mask(s), field.kinds(s))


def reach(G: Digraph, sources, direction: str = "fwd") -> VertexSet:
    """Sources together with every vertex reachable from them."""
    if direction not in ("fwd", "bwd"):
        raise ValueError("direction must be 'fwd' or 'bwd'")
    indptr, indices = (G.indptr, G.indices) if direction == "fwd" else (G.in_indptr, G.in_indices)
    seen = _as_vertex_set(G.n, sources).mask.copy()
    frontier = np.flatnonzero(seen)
    while frontier.size:
        nb = _gather(indptr, indices, frontier)
        nb = nb[~seen[nb]]
        if not nb.size:
            break
        frontier = np.unique(nb)
        seen[frontier] = True
    return VertexSet(seen)


def strict_reach(G: Digraph, x: int, direction: str = "fwd") -> VertexSet:
    """Vertices reachable from ``x`` by at least one edge."""
    nb = G.out_neighbors(x) if direction == "fwd" else G.in_neighbors(x)
    if not nb.size:
        return VertexSet.empty(G.n)
    return reach(G, VertexSet.of(G.n, nb), direction)


def recurrent_set(G: Digraph, field: ConeField | None = None) -> VertexSet:
    """Members of nontrivial strongly connected components plus singular vertices."""
    d = G.sccs
    mask = d.nontrivial[d.labels]
    singular = getattr(G, "singular_mask", None)
    if field is not None:
        singular = field.singular_mask(getattr(G, "stencil_radius", 1))
    if singular is not None:
        mask = mask | singular
    return VertexSet(mask)


def k_future(field: ConeField, x: int, s: int = 1) -> VertexSet:
    return reach(field.graph(BASE, s), x)


def k_past(field: ConeField, x: int, s: int = 1) -> VertexSet:
    return reach(field.graph(BASE, s), x, "bwd")


def f_future(field: ConeField, x: int, thetas, s: int = 1, r: int = 0):
    """Forward reach sets under a decreasing family of angular enlargements."""
    thetas = [float(t) for t in thetas]
    if not thetas or any(t <= 0 for t in thetas) or any(a <= b for a, b in zip(thetas, thetas[1:])):
        raise ValueError("thetas must be positive and strictly decreasing")
    return [(t, reach(field.graph(Enlargement(t, r), s), x)) for t in thetas]


def is_k_causal(field: ConeField, s: int = 1) -> bool:
    return not field.graph(BASE, s).sccs.nontrivial.any()


def is_stably_causal_at(field: ConeField, theta: float, s: int = 1, r: int = 0) -> bool:
    if not theta > 0:
        raise ValueError("stable causality is probed with theta > 0")
    return not recurrent_set(field.graph(Enlargement(theta, r), s))
