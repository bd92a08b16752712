"""Exception types raised across the package."""


class TSDCFLError(Exception):
    """Base class for all package errors."""


class InfeasibleAssignment(TSDCFLError):
    """A column cannot be placed on s+1 distinct workers."""


class SingularSubmatrix(TSDCFLError):
    """An auxiliary submatrix used to fill a column is not invertible."""


class MissingPartial(TSDCFLError):
    """A partial gradient needed by a code word was not supplied."""


class IndivisibleWorkers(TSDCFLError):
    """Fractional repetition needs (s+1) to divide the worker count."""


class TooFewSamples(TSDCFLError):
    pass


class EmptyPartition(TSDCFLError):
    pass


class EnergyViolation(TSDCFLError):
    """A slot decision spends more energy than the battery holds."""


class EpochFailed(TSDCFLError):
    """The epoch deadline passed without a decodable survivor set."""


class ConfigError(TSDCFLError):
    """Invalid experiment configuration.

    ``problems`` maps a dotted field name to a human readable diagnostic.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = {"config": problems}
        self.problems = dict(problems)
        msg = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(msg)
