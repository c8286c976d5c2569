"""Exception types; each carries the CLI exit code it maps to."""


class StepSpikeError(Exception):
    exit_code = 1


class InputError(StepSpikeError, ValueError):
    """Malformed or missing input data."""

    exit_code = 2


class DataConsistencyError(StepSpikeError, ValueError):
    """Inputs parse but disagree with each other (span mismatch, gaps, missing fixings)."""

    exit_code = 3


class ConvergenceError(StepSpikeError):
    exit_code = 4


class DependencyError(StepSpikeError):
    """A pipeline stage was run without the output of the stage it depends on."""

    exit_code = 5
