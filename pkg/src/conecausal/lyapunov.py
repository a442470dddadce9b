"""Discrete Lyapunov functions and the approximation of special causal functions.

All potentials here are built from the condensation DAG of an enlarged
causal graph: constant on strongly connected components, graded by the
longest-path index between them. The approximation glues one step function
per slab ``[k eps, (k+1) eps]`` of the target function.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .analysis import ScalarField, ValueBins, classify_neutral, strict_value_bins
from .causal_graph import CausalGraph, Digraph, VertexSet, _levels, reach, recurrent_set
from .errors import NoStrictBin, NotStrict


@dataclass(frozen=True)
class StepSpec:
    a_minus: float
    a: float
    a_plus: float

    def __post_init__(self):
        if not self.a_minus < self.a < self.a_plus:
            raise ValueError(f"need a_minus < a < a_plus, got {self.a_minus}, {self.a}, {self.a_plus}")


@dataclass
class LyapunovReport:
    margin: float  # min increase per unit step length over edges leaving non-recurrent vertices
    critical: VertexSet  # sources of base edges increasing by less than delta_0 per unit length
    decreasing_edges: list
    weak_edges: list  # non-recurrent edges below delta_0
    delta_0: float
    sup_error: float | None = None
    flags: list = field(default_factory=list)
    slabs: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.decreasing_edges

    @property
    def passed(self) -> bool:
        return not self.decreasing_edges and not self.weak_edges

    def summary(self) -> dict:
        return {
            "margin": self.margin,
            "critical_count": len(self.critical),
            "decreasing_edges": len(self.decreasing_edges),
            "weak_edges": len(self.weak_edges),
            "delta_0": self.delta_0,
            "sup_error": self.sup_error,
            "flags": list(self.flags),
            "slabs": list(self.slabs),
        }


def complete_lyapunov(G: CausalGraph) -> ScalarField:
    """Longest-path rank of each vertex's component, scaled into [0, 1]."""
    d = G.sccs
    rank = d.level[d.labels].astype(float)
    top = max(1.0, float(rank.max()) if rank.size else 0.0)
    return ScalarField(G.grid, rank / top)


def trapping_closure(G_theta: Digraph, seed) -> VertexSet:
    """Smallest forward-invariant vertex set containing ``seed``."""
    if isinstance(seed, VertexSet) and not seed:
        return VertexSet.empty(G_theta.n)
    return reach(G_theta, seed, "fwd")


def _band_rank(G: Digraph, band: np.ndarray):
    """Longest-path index of each band vertex within the condensation restricted to the band."""
    d = G.sccs
    comps = np.unique(d.labels[band])
    if not comps.size:
        return np.zeros(G.n, dtype=np.int64), 0, 0
    local = np.full(d.count, -1, dtype=np.int64)
    local[comps] = np.arange(comps.size)
    src = np.repeat(np.arange(d.count), np.diff(d.dag.indptr))
    dst = d.dag.indices
    keep = (local[src] >= 0) & (local[dst] >= 0)
    sub = Digraph(comps.size, local[src[keep]], local[dst[keep]])
    _, level = _levels(sub)
    rank = np.zeros(G.n, dtype=np.int64)
    rank[band] = level[local[d.labels[band]]]
    plateaus = int(np.count_nonzero(d.nontrivial[comps]))
    return rank, int(level.max()), plateaus


def _step(f: ScalarField, spec: StepSpec, G_theta: CausalGraph, bins: ValueBins, strict: bool):
    if not bins.is_strict_value(spec.a):
        raise NotStrict(f"a={spec.a:.6g} is not a strict value of f at bin width {bins.width:.3g}")
    vals = f.values
    n = G_theta.n
    F_i = vals >= spec.a_plus
    F_e = vals <= spec.a_minus
    A = trapping_closure(G_theta, VertexSet(vals >= spec.a)).mask
    top = trapping_closure(G_theta, VertexSet(F_i)).mask
    if np.any(A & F_e):
        raise NotStrict(
            f"trapping domain of {{f >= {spec.a:.6g}}} reaches {{f <= {spec.a_minus:.6g}}}; "
            "theta too large or a not strict"
        )
    if np.any(top & F_e):
        raise NotStrict(f"forward closure of {{f >= {spec.a_plus:.6g}}} reaches {{f <= {spec.a_minus:.6g}}}")
    d = G_theta.sccs
    hit_i = np.zeros(d.count, dtype=bool)
    hit_e = np.zeros(d.count, dtype=bool)
    hit_i[d.labels[F_i]] = True
    hit_e[d.labels[F_e]] = True
    if np.any(d.nontrivial & hit_i & hit_e):
        raise NotStrict("a recurrent component meets both {f >= a_plus} and {f <= a_minus}")

    band = A & ~top
    rank, r_band, plateaus = _band_rank(G_theta, band)
    tau = np.full(n, spec.a_minus)
    tau[band] = spec.a_minus + (spec.a_plus - spec.a_minus) * (rank[band] + 1) / (r_band + 2)
    tau[top] = spec.a_plus
    if plateaus:
        msg = f"{plateaus} recurrent component(s) inside the open band ({spec.a_minus:.6g}, {spec.a_plus:.6g})"
        if strict:
            raise NotStrict(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    info = {
        "a_minus": spec.a_minus,
        "a": spec.a,
        "a_plus": spec.a_plus,
        "band_size": int(np.count_nonzero(band)),
        "band_depth": r_band,
        "top_leak": int(np.count_nonzero(top & ~F_i)),
        "band_plateaus": plateaus,
    }
    return tau, info


def step_lyapunov(
    f: ScalarField,
    spec: StepSpec,
    G_theta: CausalGraph,
    G_base: CausalGraph,
    strict: bool = False,
    bins: ValueBins | None = None,
) -> ScalarField:
    """Lyapunov step from ``a_minus`` (on ``f <= a_minus``) to ``a_plus`` (on ``f >= a_plus``)."""
    if bins is None:
        bins = strict_value_bins(f, classify_neutral(f, G_base))
    tau, _ = _step(f, spec, G_theta, bins, strict)
    return ScalarField(f.grid, tau)


def slab_index(values, eps):
    """``k`` with ``k*eps <= f < (k+1)*eps`` evaluated in the same float arithmetic as the slab ends."""
    k = np.floor(values / eps).astype(np.int64)
    k -= values < k * eps
    k += values >= (k + 1) * eps
    return k


def pick_strict_value(bins: ValueBins, lo: float, hi: float) -> float | None:
    """Strict value in ``(lo, hi)`` closest to the midpoint; ties go to the lower value."""
    mid = 0.5 * (lo + hi)
    cands = []
    centers = bins.centers[bins.strict]
    cands.extend(c for c in centers if lo < c < hi)
    if hi > bins.hi:
        cands.append(0.5 * (max(lo, bins.hi) + hi))
    if lo < bins.lo:
        cands.append(0.5 * (lo + min(hi, bins.lo)))
    if not cands:
        return None
    return float(min(cands, key=lambda c: (abs(c - mid), c)))


def approximate(
    f: ScalarField,
    eps: float,
    G_theta: CausalGraph,
    G_base: CausalGraph,
    add_regularizer: bool = False,
    bins: ValueBins | None = None,
    strict: bool = False,
    delta_0: float = 1e-6,
    workers: int = 1,
):
    """Lyapunov function within ``eps`` of ``f`` (``2 eps`` with the regularizer).

    Returns ``(tau, report)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    R = recurrent_set(G_theta)
    vals = f.values
    if f.span == 0:
        tau = vals.copy()
        slabs = []
    else:
        if bins is None:
            bins = strict_value_bins(f, classify_neutral(f, G_base))
        if not eps > 2 * bins.width:
            raise ValueError(f"eps={eps} must exceed twice the bin width {bins.width}")
        k_of = slab_index(vals, eps)
        ks = np.unique(k_of)
        specs = []
        for k in ks:
            a_minus, a_plus = k * eps, (k + 1) * eps
            a = pick_strict_value(bins, a_minus, a_plus)
            if a is None:
                raise NoStrictBin(int(k), f"slab {k} = [{a_minus:.6g}, {a_plus:.6g}] contains no strict value bin")
            specs.append((int(k), StepSpec(a_minus, a, a_plus)))

        def run(item):
            k, spec = item
            try:
                return k, _step(f, spec, G_theta, bins, strict)
            except NotStrict as exc:
                raise NotStrict(f"slab {k}: {exc}") from exc

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(run, specs))
        else:
            results = [run(item) for item in specs]
        tau = np.empty_like(vals)
        slabs = []
        for k, (tau_k, info) in results:
            sel = k_of == k
            tau[sel] = tau_k[sel]
            slabs.append({"k": k, **info})
    if add_regularizer:
        tau = tau + eps * complete_lyapunov(G_theta).values
    out = ScalarField(f.grid, tau)
    report = verify_lyapunov(out, G_base, R, delta_0)
    report.sup_error = float(np.max(np.abs(tau - vals)))
    report.slabs = slabs
    src, dst = G_theta.edges()
    if np.any(tau[dst] < tau[src]):
        report.flags.append("decreases along enlarged edges")
    bound = 2 * eps if add_regularizer else eps
    if not report.sup_error < bound:
        report.flags.append(f"sup error {report.sup_error:.6g} not below {bound:.6g}")
    return out, report


def verify_lyapunov(tau: ScalarField, G_base: CausalGraph, R_set: VertexSet | None = None, delta_0: float = 1e-6) -> LyapunovReport:
    """Check monotonicity on every edge and a uniform increase off ``R_set``."""
    if delta_0 < 0:
        raise ValueError("delta_0 must be nonnegative")
    src, dst = G_base.edges()
    vals = tau.values
    inc = vals[dst] - vals[src]
    lengths = getattr(G_base, "edge_length", None)
    rate = inc / lengths if lengths is not None else inc
    decreasing = inc < 0
    off_r = np.ones(src.size, dtype=bool) if R_set is None else ~R_set.mask[src]
    weak = off_r & (rate < delta_0)
    margin = float(rate[off_r].min()) if np.any(off_r) else math.inf
    critical = np.zeros(G_base.n, dtype=bool)
    critical[src[rate < delta_0]] = True
    return LyapunovReport(
        margin=margin,
        critical=VertexSet(critical),
        decreasing_edges=list(zip(src[decreasing].tolist(), dst[decreasing].tolist())),
        weak_edges=list(zip(src[weak].tolist(), dst[weak].tolist())),
        delta_0=delta_0,
    )


def smooth_field(tau: ScalarField, rho: int, G_base: CausalGraph | None = None) -> ScalarField:
    """Separable triangular-kernel average of radius ``rho`` cells.

    Circle factors wrap; interval factors truncate the kernel and renormalize.
    Margins are not preserved in general; re-run ``verify_lyapunov``.
    """
    if int(rho) != rho or rho < 1:
        raise ValueError("rho must be a positive integer")
    grid = tau.grid
    weights = (rho + 1.0) - np.abs(np.arange(-rho, rho + 1))
    weights /= weights.sum()
    num = tau.values.reshape(grid.shape)
    den = np.ones(grid.shape)
    for axis, fac in enumerate(grid.factors):
        mode = "wrap" if fac.periodic else "constant"
        num = ndimage.correlate1d(num, weights, axis=axis, mode=mode, cval=0.0)
        if not fac.periodic:
            den = ndimage.correlate1d(den, weights, axis=axis, mode=mode, cval=0.0)
    return ScalarField(grid, (num / den).reshape(-1))
