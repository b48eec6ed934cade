"""Exception types shared across the package."""


class SlicelabError(Exception):
    """Base class for all errors raised by this package."""


class DatasetError(SlicelabError):
    """Malformed dataset directory or invariant-violating dataset."""


class EncodingError(SlicelabError):
    """Text could not be encoded (e.g. every token out of vocabulary)."""


class UnscoreableClassError(SlicelabError):
    """Class has no errors or no correct predictions on the scored split."""


class ConfigError(SlicelabError):
    """Invalid configuration value or objective/annotation mismatch."""


class TrainingDivergedError(SlicelabError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
