"""Sampled product manifolds built from circle and interval factors.

Vertices are numbered row-major over the factor indices. Circle factors
identify ``hi`` with ``lo``; interval factors include both end points.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidFactor, OutOfWindow

MAX_DIM = 4


@dataclass(frozen=True)
class GridFactor:
    periodic: bool
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidFactor(f"factor needs n >= 2 samples, got {self.n}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.hi <= self.lo:
            raise InvalidFactor(f"factor needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.length / self.n
        return self.length / (self.n - 1)

    def coordinate(self, i):
        return self.lo + np.asarray(i) * self.spacing

    @classmethod
    def from_dict(cls, d) -> GridFactor:
        try:
            return cls(bool(d["periodic"]), float(d["lo"]), float(d["hi"]), int(d["n"]))
        except KeyError as exc:
            raise InvalidFactor(f"factor is missing key {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {"periodic": self.periodic, "lo": self.lo, "hi": self.hi, "n": self.n}


@dataclass(frozen=True)
class Displacement:
    vector: tuple

    @property
    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.vector))

    def __neg__(self):
        return Displacement(tuple(-c for c in self.vector))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vector, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Stencil:
    """Offsets of a Chebyshev ball, shared by every vertex of a grid.

    ``targets[v, k]`` is the vertex reached from ``v`` by offset ``k``, or -1
    when the offset leaves an interval factor.
    """

    radius: int
    offsets: np.ndarray  # (K, d) minimal-image index offsets
    displacements: np.ndarray  # (K, d) coordinate units
    norms: np.ndarray
    directions: np.ndarray  # unit vectors
    targets: np.ndarray

    def __len__(self):
        return len(self.offsets)


class ManifoldGrid:
    def __init__(self, factors):
        factors = tuple(f if isinstance(f, GridFactor) else GridFactor.from_dict(f) for f in factors)
        if not 1 <= len(factors) <= MAX_DIM:
            raise InvalidFactor(f"grid dimension must be between 1 and {MAX_DIM}, got {len(factors)}")
        self.factors = factors
        self.shape = tuple(f.n for f in factors)
        self.dim = len(factors)
        self.size = int(np.prod(self.shape))
        self.spacing = np.array([f.spacing for f in factors])
        self.periodic = np.array([f.periodic for f in factors])
        self._stencils = {}

    def __repr__(self):
        kinds = " x ".join(("S" if f.periodic else "I") + f"[{f.lo:g},{f.hi:g}]({f.n})" for f in self.factors)
        return f"ManifoldGrid({kinds})"

    def __eq__(self, other):
        return isinstance(other, ManifoldGrid) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    @property
    def N(self) -> int:
        return self.size

    def multi_index(self, v):
        return tuple(int(i) for i in np.unravel_index(v, self.shape))

    def index(self, multi) -> int:
        multi = list(multi)
        for axis, f in enumerate(self.factors):
            if f.periodic:
                multi[axis] %= f.n
            elif not 0 <= multi[axis] < f.n:
                raise IndexError(f"index {multi[axis]} outside interval factor {axis}")
        return int(np.ravel_multi_index(multi, self.shape))

    @cached_property
    def multi_indices(self) -> np.ndarray:
        return np.indices(self.shape).reshape(self.dim, -1).T

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates of every vertex, shape (N, d)."""
        out = np.empty((self.size, self.dim))
        for axis, f in enumerate(self.factors):
            out[:, axis] = f.coordinate(self.multi_indices[:, axis])
        return out

    def coordinates(self, v) -> np.ndarray:
        return self.coords[v].copy()

    def minimal_image(self, vec) -> np.ndarray:
        """Reduce periodic components of coordinate differences into [-L/2, L/2]."""
        vec = np.array(vec, dtype=float)
        for axis, f in enumerate(self.factors):
            if f.periodic:
                L = f.length
                comp = vec[..., axis]
                vec[..., axis] = comp - L * np.round(comp / L)
        return vec

    def displacement(self, v, w) -> Displacement:
        diff = np.subtract(self.multi_index(w), self.multi_index(v)) * self.spacing
        return Displacement(tuple(float(c) for c in self.minimal_image(diff)))

    def nearest_vertex(self, point) -> int:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise OutOfWindow(f"point has {point.size} coordinates, grid has {self.dim}")
        multi = []
        for x, f in zip(point, self.factors):
            i = int(np.round((x - f.lo) / f.spacing))
            if f.periodic:
                i %= f.n
            elif not (f.lo - f.spacing / 2 <= x <= f.hi + f.spacing / 2):
                raise OutOfWindow(f"coordinate {x} outside [{f.lo}, {f.hi}]")
            else:
                i = min(max(i, 0), f.n - 1)
            multi.append(i)
        return self.index(multi)

    def stencil(self, s: int) -> Stencil:
        if s < 1:
            raise ValueError(f"stencil radius must be >= 1, got {s}")
        if s not in self._stencils:
            self._stencils[s] = self._build_stencil(s)
        return self._stencils[s]

    def _build_stencil(self, s):
        seen = set()
        offsets = []
        for off in itertools.product(range(-s, s + 1), repeat=self.dim):
            canon = []
            image = []
            for o, f in zip(off, self.factors):
                if f.periodic:
                    c = o % f.n
                    canon.append(c)
                    image.append(c if c <= f.n // 2 else c - f.n)
                else:
                    canon.append(o)
                    image.append(o)
            canon = tuple(canon)
            if not any(image) or canon in seen:
                continue
            seen.add(canon)
            offsets.append(image)
        offsets = np.array(offsets, dtype=np.int64).reshape(-1, self.dim)
        disp = offsets * self.spacing
        norms = np.linalg.norm(disp, axis=1)

        shifted = self.multi_indices[:, None, :] + offsets[None, :, :]
        valid = np.ones(shifted.shape[:2], dtype=bool)
        for axis, f in enumerate(self.factors):
            if f.periodic:
                shifted[..., axis] %= f.n
            else:
                valid &= (shifted[..., axis] >= 0) & (shifted[..., axis] < f.n)
                np.clip(shifted[..., axis], 0, f.n - 1, out=shifted[..., axis])
        targets = np.ravel_multi_index(tuple(np.moveaxis(shifted, -1, 0)), self.shape)
        targets = np.where(valid, targets, -1)
        return Stencil(s, offsets, disp, norms, disp / norms[:, None], targets)


def build_grid(factors) -> ManifoldGrid:
    return ManifoldGrid(factors)


def stencil_neighbors(grid: ManifoldGrid, v: int, s: int):
    """Neighbors of ``v`` within Chebyshev index distance ``s``, with displacements."""
    st = grid.stencil(s)
    out = []
    for k, w in enumerate(st.targets[v]):
        if w >= 0:
            out.append((int(w), Displacement(tuple(float(c) for c in st.displacements[k]))))
    return out
