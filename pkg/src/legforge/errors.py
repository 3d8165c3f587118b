from __future__ import annotations


class LegforgeError(Exception):
    """Base class for every error raised by legforge."""


class GenomeFormatError(LegforgeError, ValueError):
    """A genome record is malformed or violates a bound; the message names the field."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field} {message}" if field else message)


class DegenerateGenomeError(LegforgeError):
    def __init__(self, message: str = "degenerate length") -> None:
        super().__init__(message)


class EmptyPhenotypeError(LegforgeError):
    def __init__(self, message: str = "empty phenotype") -> None:
        super().__init__(message)


class ConfigError(LegforgeError, ValueError):
    pass


class ExportError(LegforgeError, OSError):
    def __init__(self, path: object, reason: str) -> None:
        self.path = path
        super().__init__(f"cannot write {path}: {reason}")


class RunAbortedError(LegforgeError):
    def __init__(self, run_dir: object, reason: str) -> None:
        self.run_dir = run_dir
        super().__init__(f"run aborted in {run_dir}: {reason}")
