"""Exception hierarchy shared by every ebnet module."""


class EBNetError(Exception):
    """Base class for all errors raised by ebnet."""


class ShapeMismatch(EBNetError, ValueError):
    pass


class ParseError(EBNetError, ValueError):
    pass


class GraphError(EBNetError, ValueError):
    pass


class CycleDetected(GraphError):
    pass


class DanglingInput(GraphError):
    """A layer names an input id that no layer defines."""


class MissingWeights(EBNetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IndexOutOfRange(EBNetError, IndexError):
    pass


class NegativeWeight(EBNetError, ValueError):
    pass


class NegativeActivation(EBNetError, ValueError):
    pass


class UnknownLayer(EBNetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnsupportedLayerKind(EBNetError, TypeError):
    pass


class SignalBelowTarget(EBNetError, ValueError):
    pass


class DualUndefined(EBNetError, ValueError):
    pass


class TooLarge(EBNetError, ValueError):
    pass


class SingularSystem(EBNetError, ArithmeticError):
    pass


class EmptyCategory(EBNetError, ValueError):
    pass


class EmptyAttention(EBNetError, ValueError):
    pass


class EmptyProposal(EBNetError, ValueError):
    pass
