"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary file or wire payload violates its documented format."""


class ConsistencyError(ValueError):
    """Two inputs that must agree (shapes, class counts, lengths) do not."""


class ConfigError(ValueError):
    """Invalid experiment configuration; `field` points at the offender."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class TopologyError(ValueError):
    """An adjacency structure violates the topology invariants."""


class PartitionError(RuntimeError):
    """A data partition could not satisfy the non-empty-node guarantee."""


class FittingError(RuntimeError):
    """Every candidate mixture fit failed; caller should fall back."""


class NumericError(RuntimeError):
    """NaN or infinity appeared inside an iterative numeric routine."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class TrainingError(RuntimeError):
    """Local training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
