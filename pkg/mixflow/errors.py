# mixflow/errors.py


class MixflowError(Exception):
    """Base exception for all mixflow errors."""

    pass


# -----------------------------
# Validation & configuration errors
# -----------------------------


class ValidationError(MixflowError):
    """Raised when an argument violates a precondition."""

    def __init__(self, field, message=None):
        self.field = field
        message = message or f"Invalid value for '{field}'."
        super().__init__(f"{field}: {message}")


class ConfigurationError(MixflowError):
    """Raised for bad config keys, TL programs or controller/spec mismatches."""

    def __init__(self, message="Invalid configuration."):
        super().__init__(message)


class SchemaError(MixflowError):
    """Raised when a document violates the scenario schema."""

    def __init__(self, path, message=None):
        self.path = path
        message = message or "schema violation"
        super().__init__(f"{path}: {message}")


class UnsupportedVersionError(MixflowError):
    """Raised when a document or checkpoint declares an unknown format version."""

    def __init__(self, version, message=None):
        self.version = version
        message = message or f"Format version {version!r} is not supported."
        super().__init__(message)


# -----------------------------
# Network errors
# -----------------------------


class NoRouteError(MixflowError):
    """Raised when a destination edge cannot be reached from an origin edge."""

    def __init__(self, origin, destination, message=None):
        self.origin = origin
        self.destination = destination
        message = message or f"No route from '{origin}' to '{destination}'."
        super().__init__(message)


class TopologyError(MixflowError):
    """Raised when a junction does not have enough legs to build a network."""

    def __init__(self, message="Junction topology is not supported."):
        super().__init__(message)


class OsmParseError(MixflowError):
    """Raised when an OSM document is not well-formed XML."""

    def __init__(self, line, message=None):
        self.line = line
        message = message or "malformed XML"
        super().__init__(f"OSM parse error at line {line}: {message}")


class OsmReferenceError(MixflowError):
    """Raised when a way references a node that is not in the document."""

    def __init__(self, way_id, node_id, message=None):
        self.way_id = way_id
        self.node_id = node_id
        message = message or f"Way {way_id} references undefined node {node_id}."
        super().__init__(message)


# -----------------------------
# Simulation errors
# -----------------------------


class StaleCommandError(MixflowError):
    """Raised when acceleration commands target vehicles that are not live RVs."""

    def __init__(self, ids, message=None):
        self.ids = sorted(ids)
        message = message or f"Commands for unknown or non-RV vehicles: {', '.join(self.ids)}"
        super().__init__(message)


class UnknownVehicleError(MixflowError):
    """Raised when an operation refers to a vehicle that is not live."""

    def __init__(self, vehicle_id, message=None):
        self.vehicle_id = vehicle_id
        message = message or f"Vehicle '{vehicle_id}' is not live."
        super().__init__(message)


# -----------------------------
# Learning errors
# -----------------------------


class TrainingDivergenceError(MixflowError):
    """Raised when a loss or a learned parameter becomes non-finite."""

    def __init__(self, message="Training diverged.", snapshot=None):
        self.snapshot = snapshot or {}
        super().__init__(message)


class CheckpointFormatError(MixflowError):
    """Raised when a checkpoint file is truncated or has a bad header."""

    def __init__(self, message="Malformed checkpoint file."):
        super().__init__(message)
