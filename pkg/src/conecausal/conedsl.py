"""Expression language for cone fields and scalar functions.

Grammar (whitespace insignificant)::

    expr  := or
    or    := and ("||" and)*
    and   := not ("&&" not)*
    not   := "!" not | cmp
    cmp   := sum ((">=" | "<=" | ">" | "<") sum)?
    sum   := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | pow
    pow   := atom ("^" integer)*          # right-associative
    atom  := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
    ident := "x"digits | "v"digits | "abs" | "min" | "max"

``x1..xd`` are point coordinates, ``v1..vd`` tangent components. Cones are
boolean expressions in both; scalar functions are numeric expressions in
``x`` only.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, BorderlineRegular, EvalError, ParseError

# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "v"
    index: int  # 1-based
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: object
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Not:
    operand: object
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Logic:
    op: str  # "&&" or "||"
    left: object
    right: object
    pos: int = field(default=0, compare=False, repr=False)


BOOLEAN_NODES = (Compare, Not, Logic)
FUNCTIONS = {"abs": (1, 1), "min": (1, None), "max": (1, None)}


def is_boolean(node) -> bool:
    return isinstance(node, BOOLEAN_NODES)


def variables(node):
    """Set of ``(kind, index)`` pairs referenced by ``node``."""
    if isinstance(node, Var):
        return {(node.kind, node.index)}
    if isinstance(node, Num):
        return set()
    out = set()
    for child in _children(node):
        out |= variables(child)
    return out


def _children(node):
    if isinstance(node, (Neg, Not)):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare, Logic)):
        return (node.left, node.right)
    if isinstance(node, Pow):
        return (node.base,)
    if isinstance(node, Call):
        return node.args
    return ()


# --------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>>=|<=|&&|\|\||[-+*/^(),<>!])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number, ident, op, eof
    text: str
    pos: int


def tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# --------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = tokenize(text)
        self.i = 0
        self.open_parens = []

    @property
    def tok(self):
        return self.tokens[self.i]

    def accept(self, *ops):
        if self.tok.kind == "op" and self.tok.text in ops:
            self.i += 1
            return self.tokens[self.i - 1]
        return None

    def expect(self, op):
        if self.accept(op) is None:
            self.fail(f"expected {op!r}", [repr(op)])

    def fail(self, message, expected):
        tok = self.tok
        if tok.kind == "eof" and self.open_parens:
            # input ended inside a group: blame the unclosed parenthesis
            raise ParseError(f"{message}, input ends inside '('", self.open_parens[-1], expected)
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"{message}, found {found}", tok.pos, expected)

    def parse(self):
        node = self.or_()
        if self.tok.kind != "eof":
            self.fail("unexpected token", ["end of input", "'&&'", "'||'"])
        return node

    def or_(self):
        node = self.and_()
        while (t := self.accept("||")) is not None:
            node = Logic("||", node, self.and_(), t.pos)
        return node

    def and_(self):
        node = self.not_()
        while (t := self.accept("&&")) is not None:
            node = Logic("&&", node, self.not_(), t.pos)
        return node

    def not_(self):
        if (t := self.accept("!")) is not None:
            return Not(self.not_(), t.pos)
        return self.cmp()

    def cmp(self):
        node = self.sum()
        if (t := self.accept(">=", "<=", ">", "<")) is not None:
            node = Compare(t.text, node, self.sum(), t.pos)
        return node

    def sum(self):
        node = self.term()
        while (t := self.accept("+", "-")) is not None:
            node = BinOp(t.text, node, self.term(), t.pos)
        return node

    def term(self):
        node = self.unary()
        while (t := self.accept("*", "/")) is not None:
            node = BinOp(t.text, node, self.unary(), t.pos)
        return node

    def unary(self):
        if (t := self.accept("-")) is not None:
            return Neg(self.unary(), t.pos)
        return self.pow()

    def pow(self):
        node = self.atom()
        exps = []
        while (t := self.accept("^")) is not None:
            tok = self.tok
            if tok.kind != "number" or not tok.text.isdigit():
                self.fail("exponent must be a nonnegative integer literal", ["integer"])
            self.i += 1
            exps.append((int(tok.text), t.pos))
        if exps:
            e = exps[-1][0]
            for k, _ in reversed(exps[:-1]):
                e = k**e
            node = Pow(node, e, exps[0][1])
        return node

    def atom(self):
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Num(float(tok.text), tok.pos)
        if tok.kind == "ident":
            self.i += 1
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            return self.variable(tok)
        if (t := self.accept("(")) is not None:
            self.open_parens.append(t.pos)
            node = self.or_()
            self.expect(")")
            self.open_parens.pop()
            return node
        self.fail("expected an operand", ["number", "identifier", "'('", "'-'"])

    def call(self, name_tok):
        name = name_tok.text
        if name not in FUNCTIONS:
            raise ArityError(f"unknown function {name!r} at offset {name_tok.pos}")
        self.open_parens.append(self.tok.pos)
        self.expect("(")
        args = [self.or_()]
        while self.accept(",") is not None:
            args.append(self.or_())
        self.expect(")")
        self.open_parens.pop()
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ArityError(f"{name} takes {lo}{'' if hi == lo else '+'} argument(s), got {len(args)}")
        return Call(name, tuple(args), name_tok.pos)

    def variable(self, tok):
        m = re.fullmatch(r"([xv])(\d+)", tok.text)
        if m is None:
            raise ArityError(f"unknown identifier {tok.text!r} at offset {tok.pos}")
        index = int(m.group(2))
        if not 1 <= index <= self.dim:
            raise ArityError(f"{tok.text!r} at offset {tok.pos} is out of range for dimension {self.dim}")
        return Var(m.group(1), index, tok.pos)


def _typecheck(node):
    """Return True for boolean nodes; reject arithmetic on booleans and vice versa."""
    if isinstance(node, (Num, Var)):
        return False
    if isinstance(node, Logic):
        for child in (node.left, node.right):
            if not _typecheck(child):
                raise ParseError(f"operand of {node.op!r} must be a comparison", getattr(child, "pos", 0))
        return True
    if isinstance(node, Not):
        if not _typecheck(node.operand):
            raise ParseError("operand of '!' must be a comparison", node.pos)
        return True
    for child in _children(node):
        if _typecheck(child):
            raise ParseError("arithmetic on a boolean value", getattr(child, "pos", 0))
    return isinstance(node, Compare)


def parse_expr(text: str, dim: int):
    if not text or not text.strip():
        raise ParseError("empty expression", 0, ["expression"])
    node = _Parser(text, dim).parse()
    _typecheck(node)
    return node


# --------------------------------------------------------------------------
# Printing and evaluation


def pretty(node) -> str:
    """Fully parenthesized source text that reparses to an equal tree."""
    if isinstance(node, Num):
        r = repr(float(node.value))
        if "inf" in r or "nan" in r:
            raise ValueError(f"cannot print non-finite literal {r}")
        return r
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Neg):
        return f"(-{pretty(node.operand)})"
    if isinstance(node, Not):
        return f"(!{pretty(node.operand)})"
    if isinstance(node, Pow):
        return f"({pretty(node.base)}^{node.exponent})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(pretty(a) for a in node.args)})"
    return f"({pretty(node.left)} {node.op} {pretty(node.right)})"


def evaluate(node, x, v=()):
    """Evaluate ``node`` with numpy broadcasting.

    ``x`` and ``v`` are sequences of arrays (or scalars) indexed by
    coordinate; all of them must broadcast together.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        vals = x if node.kind == "x" else v
        if node.index > len(vals):
            raise ArityError(f"{node.kind}{node.index} is not bound")
        return vals[node.index - 1]
    if isinstance(node, Neg):
        return -evaluate(node.operand, x, v)
    if isinstance(node, BinOp):
        a = evaluate(node.left, x, v)
        b = evaluate(node.right, x, v)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvalError(f"division by zero at offset {node.pos}")
        return a / b
    if isinstance(node, Pow):
        return evaluate(node.base, x, v) ** node.exponent
    if isinstance(node, Call):
        args = [evaluate(a, x, v) for a in node.args]
        if node.name == "abs":
            return np.abs(args[0])
        fn = np.minimum if node.name == "min" else np.maximum
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    if isinstance(node, Compare):
        a = evaluate(node.left, x, v)
        b = evaluate(node.right, x, v)
        return {">=": np.greater_equal, "<=": np.less_equal, ">": np.greater, "<": np.less}[node.op](a, b)
    if isinstance(node, Not):
        return np.logical_not(evaluate(node.operand, x, v))
    if isinstance(node, Logic):
        fn = np.logical_and if node.op == "&&" else np.logical_or
        return fn(evaluate(node.left, x, v), evaluate(node.right, x, v))
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# Cones


@dataclass(frozen=True)
class ConeSpec:
    expr: object
    dim: int
    text: str = field(default="", compare=False)

    @classmethod
    def parse(cls, text: str, dim: int) -> ConeSpec:
        node = parse_expr(text, dim)
        if not is_boolean(node):
            raise ParseError("a cone must be a boolean expression", 0, ["comparison"])
        return cls(node, dim, text)

    def members(self, points, dirs, chunk=4096) -> np.ndarray:
        """Membership table of shape (len(points), len(dirs))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        out = np.empty((len(points), len(dirs)), dtype=bool)
        vs = [dirs[None, :, j] for j in range(self.dim)]
        step = max(1, chunk * 64 // max(len(dirs), 1))
        with np.errstate(invalid="ignore", over="ignore"):
            for a in range(0, len(points), step):
                p = points[a : a + step]
                xs = [p[:, j, None] for j in range(self.dim)]
                out[a : a + step] = np.broadcast_to(evaluate(self.expr, xs, vs), (len(p), len(dirs)))
        return out


def eval_cone_membership(spec: ConeSpec, x, v) -> bool:
    v = np.asarray(v, dtype=float)
    if not np.linalg.norm(v) > 0:
        raise ValueError("membership is only defined for nonzero tangent vectors")
    return bool(spec.members(np.asarray(x, dtype=float)[None, :], v[None, :])[0, 0])


def sphere_directions(d: int, m: int) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.column_stack([np.cos(a), np.sin(a)])
    if d == 3:
        # Fibonacci lattice
        i = np.arange(m) + 0.5
        z = 1 - 2 * i / m
        r = np.sqrt(1 - z * z)
        phi = np.pi * (3 - math.sqrt(5)) * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    from scipy.stats import norm, qmc

    u = qmc.Sobol(d, scramble=True, seed=12345).random(m)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class ConeClass:
    kind: str  # "degenerate", "regular", "singular"
    witness: np.ndarray | None = None
    margin: float | None = None


def separating_witness(dirs: np.ndarray, gamma_min: float = 1e-3, tol: float = 1e-4):
    """Find ``p`` with ``p . u > 0`` for all unit rows ``u`` of ``dirs``.

    Dual perceptron: ``p`` is kept as a convex combination of the directions
    and walks towards the point of minimal norm of their hull, moving weight
    from the worst-aligned active direction to the best-separating one
    (Mitchell-Demyanov-Malozemov steps). The largest achievable margin equals
    that minimal norm, so ``|p| < gamma_min`` certifies that no witness with
    margin ``gamma_min`` exists. Returns ``(p, margin)``.
    """
    dirs = np.asarray(dirs, dtype=float)
    cap = int(10 / gamma_min**2)
    weights = np.full(len(dirs), 1.0 / len(dirs))
    p = weights @ dirs
    best_p, best_margin = None, -np.inf
    for _ in range(cap):
        norm_p = math.sqrt(p @ p)
        if norm_p < gamma_min:
            break
        dots = dirs @ p
        j = int(np.argmin(dots))
        margin = dots[j] / norm_p
        if margin > best_margin:
            best_p, best_margin = p / norm_p, margin
        if best_margin > 0 and norm_p - best_margin <= tol:
            break
        active = np.flatnonzero(weights > 0)
        i = int(active[np.argmax(dots[active])])
        if dots[i] - dots[j] <= 1e-15:
            break
        step = dirs[j] - dirs[i]
        t = min(weights[i], -(p @ step) / (step @ step))
        weights[i] -= t
        weights[j] += t
        p = p + t * step
    if best_p is None or best_margin < gamma_min:
        raise BorderlineRegular(
            f"no separating functional with margin >= {gamma_min} (best {best_margin:.3g})"
        )
    return best_p, float(best_margin)


def classify_member_mask(members: np.ndarray, dirs: np.ndarray, gamma_min: float = 1e-3) -> ConeClass:
    if not members.any():
        return ConeClass("degenerate")
    if members.all():
        return ConeClass("singular")
    p, gamma = separating_witness(dirs[members], gamma_min)
    return ConeClass("regular", p, gamma)


def classify_cone_at(spec: ConeSpec, x, m: int = 64, extra_dirs=None, gamma_min: float = 1e-3) -> ConeClass:
    d = spec.dim
    if m < 2 * d:
        raise ValueError(f"direction sample must have at least {2 * d} entries")
    dirs = sphere_directions(d, m)
    if d > 1:
        axes = np.vstack([np.eye(d), -np.eye(d)])
        dirs = np.vstack([dirs, axes])
    if extra_dirs is not None and len(extra_dirs):
        extra = np.asarray(extra_dirs, dtype=float)
        dirs = np.vstack([dirs, extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    x = np.asarray(x, dtype=float)[None, :]
    members = spec.members(x, dirs)[0]
    for t in (0.5, 2.0):
        if not np.array_equal(members, spec.members(x, t * dirs)[0]):
            raise BorderlineRegular("membership depends on vector length; predicate is not a cone")
    return classify_member_mask(members, dirs, gamma_min)


@dataclass
class HomogeneityCheck:
    ok: bool
    counterexamples: list

    def __bool__(self):
        return self.ok


def validate_homogeneity(spec: ConeSpec, xs, dirs, scales=(0.5, 2.0)) -> HomogeneityCheck:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if not len(xs) or not len(dirs):
        raise ValueError("homogeneity check needs nonempty samples")
    base = spec.members(xs, dirs)
    bad = []
    for t in scales:
        diff = np.argwhere(spec.members(xs, t * dirs) != base)
        for i, j in diff[:20]:
            bad.append({"x": xs[i].tolist(), "v": dirs[j].tolist(), "scale": t})
    return HomogeneityCheck(not bad, bad)


def convexity_spot_check(spec: ConeSpec, xs, dirs, pairs: int = 100, seed: int = 0):
    """Midpoints of random member pairs that fall outside the cone."""
    rng = np.random.default_rng(seed)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    table = spec.members(xs, dirs)
    rows = np.flatnonzero(table.sum(axis=1) >= 2)
    bad = []
    if not len(rows):
        return bad
    for _ in range(pairs):
        i = rows[rng.integers(len(rows))]
        idx = np.flatnonzero(table[i])
        a, b = rng.choice(idx, 2, replace=False)
        mid = dirs[a] + dirs[b]
        norm = np.linalg.norm(mid)
        if norm < 1e-12:
            # opposite rays: no regular cone contains both
            bad.append({"x": xs[i].tolist(), "u": dirs[a].tolist(), "w": dirs[b].tolist()})
            continue
        if not spec.members(xs[i][None, :], (mid / norm)[None, :])[0, 0]:
            bad.append({"x": xs[i].tolist(), "u": dirs[a].tolist(), "w": dirs[b].tolist()})
    return bad
