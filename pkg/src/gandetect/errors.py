"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes, so stages deeper in the
pipeline should raise the most specific type that applies.
"""


class GandetectError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(GandetectError):
    """Bad arguments, malformed config, or violated preconditions."""


class FormatError(ValidationError):
    """A file did not parse under its declared format."""


class EmptySetError(ValidationError):
    """An operation that needs a nonempty working set received none."""


class CapabilityError(GandetectError):
    """A model was asked for something it was not built to provide."""


class NumericError(GandetectError):
    """A computation produced non-finite values."""


class MissingArtifactError(GandetectError):
    """A pipeline stage requires an artifact that has not been produced."""

    def __init__(self, artifact: str, stage_to_run: str):
        super().__init__(f"missing {artifact}; run `{stage_to_run}` first")
        self.artifact = artifact
        self.stage_to_run = stage_to_run


class CheckpointVersionError(GandetectError):
    """A checkpoint was written by an incompatible format version."""

    def __init__(self, path, found, expected):
        super().__init__(
            f"{path}: checkpoint format version {found} does not match "
            f"supported version {expected}"
        )
        self.found = found
        self.expected = expected
