class SwapSimError(Exception):
    pass


class InvalidParameter(SwapSimError, ValueError):
    pass


class ParseError(SwapSimError, ValueError):
    pass


class ReferenceError_(SwapSimError, LookupError):
    """A trace or config refers to an undefined function or model."""


class InvalidState(SwapSimError, RuntimeError):
    pass


class OutOfMemory(SwapSimError):
    def __init__(self, gpu: int, size: int, msg: str = ""):
        super().__init__(msg or f"GPU {gpu}: cannot allocate {size} bytes")
        self.gpu = gpu
        self.size = size


class OversizeError(SwapSimError, ValueError):
    pass


class InvariantViolation(SwapSimError, AssertionError):
    pass


class TranslationFault(SwapSimError, LookupError):
    pass


class RoutingError(SwapSimError):
    pass


class SchedulingError(SwapSimError):
    pass


class CapacityError(SwapSimError):
    pass


class ConfigError(SwapSimError, ValueError):
    pass
