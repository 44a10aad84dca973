"""Error hierarchy shared by every pve-lab module."""


class PveLabError(Exception):
    """Base class for all errors raised by pve-lab."""


class ShapeError(PveLabError, ValueError):
    """Array dimensions do not agree."""


class ArgumentError(PveLabError, ValueError):
    """A scalar argument is outside its admissible range."""


class NumericalError(PveLabError):
    """A numerical routine failed to reach its tolerance or produced non-finite values."""


class ConsistencyError(PveLabError):
    """A construction failed its build-time certification."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, last_finite_loss: float | None, message: str = ""):
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss
        detail = message or "non-finite loss"
        super().__init__(
            f"{detail} at iteration {iteration} (last finite loss: {last_finite_loss})"
        )


class ConfigError(PveLabError):
    """Experiment configuration failed validation."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(problems))


class OutputExistsError(PveLabError):
    """An output directory holds results produced by a different configuration."""


class FileFormatError(PveLabError):
    """A model, dataset or manifest file is missing or malformed."""
