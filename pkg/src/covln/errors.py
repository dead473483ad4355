"""Shared exception types."""


class InputError(ValueError):
    """Raised when an operation rejects its input.

    The message names the offending record or value; the CLI maps this to a
    nonzero exit code with the message as the diagnostic.
    """
