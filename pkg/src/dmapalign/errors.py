"""Exception types shared across the package."""


class DmapAlignError(Exception):
    """Base class for all package errors."""


class ShapeError(DmapAlignError):
    """Input has the wrong shape or dimension."""


class TapSelectionError(DmapAlignError):
    """A tap id does not address an existing neuron."""


class TrainingError(DmapAlignError):
    """Training diverged (non-finite loss)."""


class DomainError(DmapAlignError):
    """A point or domain descriptor is outside the supported region."""


class SpecError(DmapAlignError):
    """Unknown identifier in a closed-form map or task specification."""


class NumericalPSDError(DmapAlignError):
    """A quadratic form that must be PSD came out negative beyond tolerance."""


class InsufficientPointsError(DmapAlignError):
    """Too few points for the requested operation (e.g. n <= k neighbors)."""


class DegenerateKernelError(DmapAlignError):
    """Kernel row sums vanish; normalization impossible."""


class NumericsError(DmapAlignError):
    """An eigensolver or other numeric routine failed to converge."""


class HarmonicRemovalError(DmapAlignError):
    """Fewer independent eigenvectors survive than were requested."""


class ModelStateError(DmapAlignError):
    """Operation requires a fitted/built model."""


class AlignmentError(DmapAlignError):
    """Not enough correspondences (or inconsistent ones) for alignment."""


class InsufficientProbeError(DmapAlignError):
    """A sweep diagnostic needs more probe points."""


class ConfigError(DmapAlignError):
    """Invalid experiment or CLI configuration; carries the field name."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
