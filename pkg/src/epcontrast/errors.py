"""Exception types shared across the package.

Everything derives from ValueError or RuntimeError so callers that do not
care about the fine-grained class can still catch the builtin.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyReductionError(ValueError):
    """A reduction (logsumexp, softmax denominator) received no elements."""


class EmptyNegativeSetError(EmptyReductionError):
    """A contrastive loss has no negative pairs for some anchor."""


class ParseError(ValueError):
    """A text point-cloud file contains a malformed line."""


class FormatError(ValueError):
    """A file violates its declared layout (bad magic, mixed label modes)."""


class PayloadLengthError(FormatError):
    """A binary payload is shorter or longer than its header promises."""


class RangeError(ValueError):
    """A value lies outside its documented domain (e.g. color not in [0,1])."""


class PartitionError(ValueError):
    """A segment assignment is not a disjoint, covering, non-empty partition."""


class CacheError(ValueError):
    """An activation cache does not match the parameters it is used with."""


class BudgetError(RuntimeError):
    """A benchmark configuration exceeds the accounted byte budget."""


class ConfigError(ValueError):
    """A run configuration contains unknown keys or unparseable values."""


class DomainError(ValueError):
    """A numeric input is outside the mathematical domain of an operation."""
