"""Exception hierarchy shared by all kinpred modules."""


class KinpredError(Exception):
    """Base class for every error raised by kinpred."""


class InvalidParameterError(KinpredError, ValueError):
    pass


class InvalidInputError(KinpredError, ValueError):
    pass


class TooShortError(KinpredError, ValueError):
    pass


class OutOfRangeError(KinpredError, ValueError):
    pass


class EmptyResultError(KinpredError, ValueError):
    pass


class RankDeficiencyError(KinpredError, ValueError):
    pass


class WarmupError(KinpredError, ValueError):
    """Raised when a sequence model receives fewer steps than it needs."""


class UndefinedError(KinpredError, ValueError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


class DegreesOfFreedomError(KinpredError, ValueError):
    pass


class IncompleteGridError(KinpredError, ValueError):
    def __init__(self, holes):
        self.holes = list(holes)
        super().__init__(f"incomplete grid, missing cells: {self.holes}")


class ConvergenceError(KinpredError, RuntimeError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (final KKT residual {residual:.3g})")


class DivergenceError(KinpredError, RuntimeError):
    def __init__(self, epoch, sample):
        self.epoch = epoch
        self.sample = sample
        super().__init__(f"non-finite loss at epoch {epoch}, sample {sample}")


class DataError(KinpredError, IOError):
    """Malformed or missing on-disk data (CSV, manifest, model file)."""
