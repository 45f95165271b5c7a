"""Exception hierarchy shared across the package."""


class BackendError(RuntimeError):
    """A generation request could not be served."""


class BackendUnavailable(BackendError):
    pass


class ContextOverflow(BackendError):
    pass


class UnsupportedBackend(BackendError):
    """The backend cannot provide what was asked (e.g. gradients from a remote model)."""


class MalformedResponse(ValueError):
    pass


class OutOfRange(MalformedResponse):
    pass


class MalformedAfterRetries(RuntimeError):
    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


class EmptyBatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class NonFiniteObjective(FloatingPointError):
    pass


class DimensionMismatch(ValueError):
    pass


class ConfigInvalid(ValueError):
    pass


class MissingInputs(FileNotFoundError):
    pass
