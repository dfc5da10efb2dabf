"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 2,
check failures exit 1.
"""


class TrustRecError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TrustRecError):
    """A malformed line in an edge file."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


class EmptyInputError(TrustRecError):
    """An input file contained no usable records."""


class EmptyDatasetError(TrustRecError):
    """Preprocessing filtered out every rating."""


class ConfigError(TrustRecError):
    """A hyper-parameter or option is out of its valid range."""


class ContractError(TrustRecError):
    """A caller violated an operation's precondition (shape/kind mismatch)."""


class CheckpointError(TrustRecError):
    """A checkpoint file is inconsistent with its declared layout."""


class NonFiniteGradientError(TrustRecError):
    """An optimizer step was aborted because a gradient was not finite."""

    def __init__(self, group):
        super().__init__(f"non-finite gradient in parameter group '{group}'")
        self.group = group
