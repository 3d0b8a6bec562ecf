"""Exception hierarchy shared by every dancer module.

The CLI maps the three top-level families (configuration, data, training)
onto distinct process exit codes.
"""


class DancerError(Exception):
    exit_code = 1


class ConfigError(DancerError, ValueError):
    exit_code = 3


class DataError(DancerError, ValueError):
    exit_code = 4


class IngestionError(DataError):
    pass


class SplitError(DataError):
    pass


class QueryError(DataError):
    """Raised by the target oracle for malformed queries."""


class InputError(DataError):
    """Token ids outside the model vocabulary."""


class SimilarityError(DataError):
    pass


class SelectionError(DataError):
    pass


class TrainingError(DancerError, RuntimeError):
    exit_code = 5

    def __init__(self, message, checkpoint=None, episodes=None):
        super().__init__(message)
        # last consistent parameters / offending episodes, for post-mortems
        self.checkpoint = checkpoint
        self.episodes = episodes


class OptimizationError(TrainingError):
    pass


class UsageError(DancerError, RuntimeError):
    """API misuse: backward without a graph, encoding with an unfrozen judge..."""


class InitializationError(ConfigError):
    pass


class CheckpointError(DataError):
    pass
