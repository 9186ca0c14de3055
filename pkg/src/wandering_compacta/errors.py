"""Exception hierarchy shared by all modules."""


class WanderingError(Exception):
    """Base class. ``exit_code`` is what the command line returns."""

    exit_code = 1


class InputError(WanderingError):
    exit_code = 2


class EmptyRegion(InputError):
    pass


class ResolutionTooCoarse(InputError):
    def __init__(self, message, minimal_resolution=None):
        super().__init__(message)
        self.minimal_resolution = minimal_resolution


class BadScales(InputError):
    pass


class PlacementOverlap(InputError):
    pass


class SeparationTooSmall(WanderingError):
    pass


class PieceOverlap(WanderingError):
    pass


class ApproximationStalled(WanderingError):
    def __init__(self, message, best_bound=None):
        super().__init__(message)
        self.best_bound = best_bound


class IllConditioned(WanderingError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class StageRejected(WanderingError):
    def __init__(self, message, condition=None, margin=None, stage=None):
        super().__init__(message)
        self.condition = condition
        self.margin = margin
        self.stage = stage


class VerificationFailure(WanderingError):
    def __init__(self, message, witness=None, step=None):
        super().__init__(message)
        self.witness = witness
        self.step = step


class EscapeViolation(VerificationFailure):
    pass


class CaptureViolation(VerificationFailure):
    pass


class NotSeparatedWithinComputedStages(VerificationFailure):
    pass


class CapError(WanderingError):
    exit_code = 3


class SizeCap(CapError):
    pass


class MarginExhausted(CapError):
    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
