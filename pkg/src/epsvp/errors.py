"""Exception hierarchy shared by all modules."""


class EpsError(Exception):
    """Base class for every error raised by the toolkit."""


class ParseError(EpsError):
    """A model document is not well-formed."""


class ValidationError(EpsError, ValueError):
    """A model document parsed but violates an invariant.

    ``ident`` names the offending component, contactor, node or state.
    """

    def __init__(self, message, ident=None):
        super().__init__(message)
        self.ident = ident


class UnknownIdError(ValidationError, KeyError):
    def __str__(self):
        return self.args[0]


class FsmError(EpsError):
    """Illegal use of a controller state machine (unknown state or input)."""


class LivelockError(EpsError):
    """The controller did not quiesce within the internal step bound."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class StateBoundExceeded(EpsError):
    def __init__(self, message, states_visited):
        super().__init__(message)
        self.states_visited = states_visited


class SingularNetworkError(EpsError):
    """A loop of ideal (zero-resistance) branches makes the network singular."""

    def __init__(self, message, loop):
        super().__init__(message)
        self.loop = tuple(loop)


class InstabilityError(EpsError):
    def __init__(self, message, time):
        super().__init__(message)
        self.time = time
