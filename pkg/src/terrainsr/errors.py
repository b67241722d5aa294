"""Exception types shared across the package."""


class TerrainSrError(Exception):
    """Base class for all package-specific failures."""


class DemFormatError(TerrainSrError):
    """A DEM file is not in a recognized format or has a malformed header."""


class DemCorruptionError(DemFormatError):
    """A DEM file's payload disagrees with its declared dimensions."""


class CheckpointError(TerrainSrError):
    """A model checkpoint is missing, unreadable, or incompatible."""


class TrainingDivergedError(TerrainSrError):
    """The training loss became non-finite."""
