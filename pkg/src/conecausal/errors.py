"""Exception and warning types shared across the package."""


class ConeCausalError(Exception):
    """Base class for every error raised by this package."""


class InvalidFactor(ConeCausalError, ValueError):
    pass


class ParseError(ConeCausalError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class ArityError(ConeCausalError):
    pass


class EvalError(ConeCausalError, ArithmeticError):
    pass


class BorderlineRegular(ConeCausalError):
    """The sampled cone is not strictly inside an open half-space."""


class NotStrict(ConeCausalError):
    pass


class NoStrictBin(ConeCausalError):
    def __init__(self, k, message=None):
        self.k = k
        super().__init__(message or f"slab {k} contains no strict value bin")


class NotCausal(ConeCausalError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(f"function decreases along {len(self.violations)} causal edge(s)")


class SceneError(ConeCausalError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class OutOfWindow(ConeCausalError, ValueError):
    pass


class UnknownField(ConeCausalError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown field"


class ResolutionWarning(UserWarning):
    """A nonempty cone has no admitted stencil direction at the grid resolution."""


class ConvexityWarning(UserWarning):
    pass


class DegenerateChord(UserWarning):
    """Two consecutive curve samples coincide; the chord is skipped."""
