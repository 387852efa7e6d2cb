class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class TrainingDiverged(RuntimeError):
    """A training loss became non-finite."""


class VocoderError(RuntimeError):
    """Waveform generation failed; the message names the backend."""

    def __init__(self, backend, message):
        super().__init__(f"[vocoder:{backend}] {message}")
        self.backend = backend


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
