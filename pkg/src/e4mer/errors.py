"""Exception hierarchy shared across the pipeline.

Every error raised on purpose derives from :class:`E4merError` so the CLI can
map error classes to stable exit codes.
"""


class E4merError(Exception):
    """Base class for all pipeline errors."""


# --- parsing / ingest ---------------------------------------------------


class EmptyFile(E4merError):
    """Channel file has fewer than the two required header rows."""


class NonPositiveRate(E4merError):
    """Declared sampling rate is zero or negative."""


class MalformedRow(E4merError):
    """A data row failed to parse (bad float, NaN/Inf token, wrong arity)."""

    def __init__(self, line_no: int, message: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if message else f"line {line_no}")


class MissingChannel(E4merError):
    """A required channel file is absent from a recording directory."""

    def __init__(self, kind):
        self.kind = kind
        super().__init__(f"missing required channel {kind}")


class EmptyIntersection(E4merError):
    """Channel time spans do not overlap for at least one whole second."""


# --- wear state / segmentation ------------------------------------------


class LengthMismatch(E4merError):
    """Two sequences that must cover the same duration do not."""


class TooFewRecordings(E4merError):
    """A recording-level split needs at least two recordings."""


class EmptyInput(E4merError):
    """An operation that needs a non-empty collection received none."""


# --- pretext / model -----------------------------------------------------


class EmptyMask(E4merError):
    """Masked-reconstruction loss evaluated with zero masked cells."""


class ChannelTooShort(E4merError):
    """Channel has fewer samples than a transform's pieces/knots."""


class ConfigMismatch(E4merError):
    """Model input does not match the architecture configuration."""


class NonFiniteLoss(E4merError):
    """Training loss became NaN/Inf."""


class NonFiniteGradient(E4merError):
    """A parameter gradient became NaN/Inf."""


class CheckpointConfigMismatch(E4merError):
    """Checkpoint is incompatible with the requested operation."""


# --- features / training --------------------------------------------------


class ColumnAllMissingInTrain(E4merError):
    """Mean imputation impossible: feature column has no train values."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"feature column {column!r} entirely missing in train rows")


class EmptyPool(E4merError):
    """Self-supervised training pool contains no segments."""
