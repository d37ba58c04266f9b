"""Exception hierarchy. Each class carries a machine-readable ``category``
that the CLI reports on failure."""


class SafLabError(Exception):
    category = "internal"
    exit_code = 1


class InputError(SafLabError, ValueError):
    category = "input"
    exit_code = 2


class DimensionError(InputError):
    category = "dimension"
    exit_code = 3


class FormatError(SafLabError):
    category = "format"
    exit_code = 4


class StorageError(SafLabError, OSError):
    category = "io"
    exit_code = 5
