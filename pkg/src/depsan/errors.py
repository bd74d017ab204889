"""Exception hierarchy shared across the package."""


class DepsanError(Exception):
    """Base class for all library errors."""


class ConlluError(DepsanError, ValueError):
    """Problem in CoNLL-U input; carries the 1-based line and sentence numbers."""

    def __init__(self, message, line=None, sentence=None):
        self.line = line
        self.sentence = sentence
        prefix = []
        if sentence is not None:
            prefix.append(f"sentence {sentence}")
        if line is not None:
            prefix.append(f"line {line}")
        full = f"{', '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
        self.reason = message


class MalformedLine(ConlluError):
    pass


class MultiwordToken(ConlluError):
    pass


class EmptyNode(ConlluError):
    pass


class InvalidTree(ConlluError):
    pass


class NonPositiveSigma(DepsanError, ValueError):
    pass


class InvalidProbability(DepsanError, ValueError):
    pass


class ShapeMismatch(DepsanError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class FullyMaskedRow(DepsanError, ValueError):
    """An attention row has no allowed position after combining masks."""


class NotScalar(DepsanError, ValueError):
    pass


class GraphCycle(DepsanError, RuntimeError):
    pass


class OutOfVocab(DepsanError, ValueError):
    pass


class TooLong(DepsanError, ValueError):
    pass


class ConfigError(DepsanError, ValueError):
    pass


class Divergence(DepsanError, RuntimeError):
    pass


class EmptyEvalSet(DepsanError, ValueError):
    pass
