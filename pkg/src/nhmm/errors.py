"""Exception hierarchy shared across the package."""


class NHMMError(Exception):
    """Base class for all package errors."""


class ContractError(NHMMError, ValueError):
    """A function was called with arguments violating its preconditions."""


class ConfigError(NHMMError, ValueError):
    pass


class InputError(NHMMError, ValueError):
    """Bad user-supplied data, e.g. an out-of-vocabulary symbol."""


class InfeasibleAlignmentError(InputError):
    """Fewer frames than states: no complete left-right no-skip path exists."""

    def __init__(self, n_frames, n_states, utt_id=None):
        self.n_frames = n_frames
        self.n_states = n_states
        self.utt_id = utt_id
        where = f"utterance {utt_id!r}: " if utt_id is not None else ""
        super().__init__(
            f"{where}{n_frames} frames cannot cover {n_states} states (need T >= N)"
        )


class FormatError(NHMMError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericalError(NHMMError, ArithmeticError):
    """Non-finite loss or gradient encountered during training."""
