"""Exception classes shared across the package."""


class MMError(Exception):
    """Base class of Metamath errors."""


class LexError(MMError):
    """Malformed token stream; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScopeError(MMError):
    """Reference to a label, variable or constant that is not active."""


class GrammarError(MMError):
    """An expression has no parse, or more than one."""


class AmbiguousParse(GrammarError):
    def __init__(self, tokens, parses) -> None:
        self.parses = parses
        shown = "\n  ".join(repr(p) for p in parses[:2])
        super().__init__(f"ambiguous parse of {' '.join(tokens)!r}:\n  {shown}")


class SubstitutionError(MMError):
    """Typecode mismatch, or a variable left unsubstituted in total mode."""


class DVViolation(MMError):
    """A disjoint-variable condition is violated by a substitution."""

    def __init__(self, pair, message: str = "") -> None:
        self.pair = pair
        super().__init__(message or f"disjoint variable violation: {pair[0]} , {pair[1]}")


class DecompressionError(MMError):
    """Invalid compressed proof text."""


class VerificationError(MMError):
    """A proof failed to check."""

    def __init__(self, label: str, reason: str) -> None:
        self.label = label
        self.reason = reason
        super().__init__(f"{label}: {reason}")
