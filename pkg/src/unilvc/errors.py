"""Exception taxonomy shared by every module.

The CLI maps these onto process exit codes: FormatError -> 2,
DecodeError -> 3, InvalidArgument -> 4.
"""


class CodecError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(CodecError, ValueError):
    """An operation was called with out-of-contract arguments."""


class InvalidState(CodecError):
    """An operation was invoked before its preconditions on prior steps held."""


class FormatError(CodecError):
    """A serialized container (bitstream, weight file, raw clip) is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DecodeError(CodecError):
    """A syntactically valid stream failed to decode (corruption, truncation,
    or a weight-set mismatch)."""


class LoadError(CodecError):
    """A weight set failed validation; the message names the offending tensor."""
