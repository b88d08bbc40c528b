"""Exception hierarchy shared across the package."""


class KDualityError(Exception):
    """Base class for all errors raised by kduality."""


class ParseError(KDualityError):
    def __init__(self, position, message):
        self.position = position
        self.message = message
        super().__init__(f"at position {position}: {message}")


class UnboundVariable(KDualityError):
    pass


class DomainError(KDualityError):
    pass


class GridError(KDualityError):
    pass


class OrderNonPositive(KDualityError):
    pass


class OrderOutOfRange(KDualityError):
    pass


class SkewnessOutOfRange(KDualityError):
    pass


class NegativeDiffusion(KDualityError):
    pass


class NegativeKernel(KDualityError):
    pass


class KernelNegative(NegativeKernel):
    pass


class PositivityViolation(KDualityError):
    pass


class SmoothnessUnavailable(KDualityError):
    pass


class StepTooLarge(KDualityError):
    pass


class BadInterval(KDualityError):
    pass


class UnboundedRate(KDualityError):
    pass


class BetaOutOfRange(KDualityError, ValueError):
    pass


class SpotOutsideWindow(KDualityError):
    pass


class ConfigError(KDualityError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
