"""Exception types shared across the package."""


class InputError(ValueError):
    """Rejected input: bad shape, label, config or dataset parameters."""


class ParseError(InputError):
    """Malformed model, image or manifest file."""


class TrainingError(RuntimeError):
    """Toy training finished below the required accuracy."""

    def __init__(self, message: str, accuracy: float):
        super().__init__(f"{message} (final accuracy {accuracy:.4f})")
        self.accuracy = accuracy


class NumericError(RuntimeError):
    """A NaN or Inf appeared where a finite value is required."""
