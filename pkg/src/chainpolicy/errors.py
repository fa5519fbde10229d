"""Exception types shared across the package."""


class ChainPolicyError(Exception):
    """Base class for all package errors."""


class InvariantViolation(ChainPolicyError):
    """A value failed its structural invariants."""


class ParseError(ChainPolicyError):
    """Chain text could not be parsed.

    Carries the 1-based line number and a human-readable reason.
    """

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class RangeError(ChainPolicyError):
    """An argument fell outside its documented range."""


class PlacementFailure(ChainPolicyError):
    """Rejection sampling could not place the scene objects."""


class Unachievable(ChainPolicyError):
    """The task cannot be solved in the given state."""


class EpisodeFailure(ChainPolicyError):
    """The scripted expert failed to finish an episode (indicates a bug)."""


class TooShort(ChainPolicyError):
    """Trajectory has fewer than two frames."""


class VocabOverflow(ChainPolicyError):
    """Vocabulary exceeded its maximum size."""


class UnknownToken(ChainPolicyError):
    """Token not present in the vocabulary."""


class ContextOverflow(ChainPolicyError):
    """Sequence longer than the model context."""


class OutOfRange(ChainPolicyError):
    """Action component outside the quantizer range."""


class MalformedAction(ChainPolicyError):
    """Token ids do not form a valid discretized action."""


class EmptySupervision(ChainPolicyError):
    """Loss requested over a mask with no supervised positions."""


class NonFiniteGradient(ChainPolicyError):
    """A gradient contained NaN or Inf."""


class DecodeOverflow(ChainPolicyError):
    """Constrained decoding ran past the model context."""


class EmptyDataset(ChainPolicyError):
    """Batch sampling from an empty dataset."""
