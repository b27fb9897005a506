"""Exception types shared across the package."""


class InvalidStateError(RuntimeError):
    """An operation was invoked out of order, e.g. backward without a recorded forward."""


class TransportError(RuntimeError):
    """The guidance bridge could not be reached; safe to retry."""


class ProtocolError(RuntimeError):
    """The guidance bridge answered with a malformed or inconsistent payload."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, has the wrong version, or does not match the config."""


class DivergenceError(RuntimeError):
    """Training aborted because the guidance residual blew past the divergence guard."""
