class HandPromptError(ValueError):
    """Base error; ``code`` is a short machine-parsable tag used by the CLI."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class InvalidPose(HandPromptError):
    code = "invalid_pose"


class UnknownToken(HandPromptError):
    code = "unknown_token"


class ShapeMismatch(HandPromptError):
    code = "shape_mismatch"


class DegenerateGeometry(HandPromptError):
    code = "degenerate"


class TopologyError(HandPromptError):
    code = "topology"


class AugmentationFailed(HandPromptError):
    code = "augmentation_failed"


class TrainingDiverged(HandPromptError):
    code = "diverged"
