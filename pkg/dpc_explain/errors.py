"""Exceptions raised across the package."""


class DPCError(Exception):
    """Base class for all errors raised by dpc_explain."""


class StructuralError(DPCError, ValueError):
    """Shapes or dimensions do not compose."""


class ParameterError(DPCError, ValueError):
    """A parameter or precondition is invalid."""


class ConfigError(DPCError, ValueError):
    """The experiment configuration cannot be used."""


class IngestionError(DPCError, ValueError):
    """An input file is malformed.

    ``row``/``column`` locate CSV problems, ``offset`` locates IDX problems.
    """

    def __init__(self, message, row=None, column=None, offset=None):
        super(IngestionError, self).__init__(message)
        self.row = row
        self.column = column
        self.offset = offset


class NumericError(DPCError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, term=None):
        super(NumericError, self).__init__(message)
        self.term = term


class TrainingError(DPCError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super(TrainingError, self).__init__(message)
        self.epoch = epoch
