"""Discrete causality theory for closed cone fields on sampled manifolds."""

__version__ = "0.1.0"

from .analysis import (
    NeutralityReport,
    ScalarField,
    ValueBins,
    check_causal,
    check_curve_causal,
    classify_neutral,
    eval_field,
    is_special,
    is_time_function,
    strict_value_bins,
)
from .causal_graph import (
    BASE,
    CausalGraph,
    ConeField,
    Digraph,
    Enlargement,
    VertexSet,
    build_graph,
    f_future,
    is_k_causal,
    is_stably_causal_at,
    k_future,
    k_past,
    reach,
    recurrent_set,
    scc,
    strict_reach,
)
from .conedsl import ConeSpec, classify_cone_at, eval_cone_membership, parse_expr, pretty
from .errors import *  # noqa: F401,F403
from .geometry import GridFactor, ManifoldGrid, build_grid, stencil_neighbors
from .lyapunov import (
    LyapunovReport,
    StepSpec,
    approximate,
    complete_lyapunov,
    smooth_field,
    step_lyapunov,
    trapping_closure,
    verify_lyapunov,
)
from .scene import Scene, load_scene, validate_scene
