"""Exception hierarchy shared across the package."""


class LeashError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LeashError):
    """Invalid hyperparameter value, config file syntax, or unknown key."""


class ProtocolError(LeashError):
    """Stopper fed out of order or after a halt was already issued."""


class MalformedTraceError(LeashError):
    """Base class for corrupt or inconsistent trace data."""


class BadMagicError(MalformedTraceError):
    """Input is neither the binary logit format nor a signal JSONL file."""


class TruncatedTraceError(MalformedTraceError):
    """Binary payload shorter than the header promises."""


class VocabMismatchError(MalformedTraceError):
    """Header vocabulary size disagrees with metadata or payload shape."""


class NonContiguousStepsError(MalformedTraceError):
    """Signal step indices do not run 1, 2, ... without gaps."""


class SignalBoundsError(MalformedTraceError):
    """A per-step signal value violates its admissible range."""
