"""Exception hierarchy shared by all canopy modules.

The CLI maps these onto exit codes: validation -> 2, I/O or format -> 3,
pipeline stage failure -> 4.
"""


class CanopyError(Exception):
    """Base class for every error raised deliberately by canopy."""


class ValidationError(CanopyError, ValueError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(CanopyError, ValueError):
    """A file exists but its contents cannot be decoded."""


class RasterIOError(CanopyError, OSError):
    """Reading or writing a file failed (missing, unwritable, truncated)."""


class PipelineError(CanopyError):
    """A pipeline stage failed.

    ``stage`` names the failing stage; the original exception is kept as
    ``__cause__``.
    """

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
