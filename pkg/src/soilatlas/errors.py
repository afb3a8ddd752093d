"""Error hierarchy shared by every service layer.

Each error carries a stable machine-readable ``code`` so the HTTP layer can
serialize a consistent error envelope. The intermediate classes group codes
by the HTTP status class they map to; nothing in here imports HTTP machinery.
"""

from __future__ import annotations

from typing import Any


class PlatformError(Exception):
    """Base class for all expected, reportable failures."""

    code = "error"

    def __init__(self, message: str = "", details: Any = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details


class InvalidInput(PlatformError):
    """Client sent something structurally or semantically invalid (HTTP 422)."""

    code = "invalid"


class NotFound(PlatformError):
    """A referenced entity does not exist or is hidden (HTTP 404)."""

    code = "not_found"


class Conflict(PlatformError):
    """A uniqueness or duplicate constraint was violated (HTTP 409)."""

    code = "conflict"


class Forbidden(PlatformError):
    """Caller is authenticated but the role does not permit this (HTTP 403)."""

    code = "forbidden"


class Unauthorized(PlatformError):
    """Caller identity is missing or cannot be established (HTTP 401)."""

    code = "unauthorized"


# --- domain validation -------------------------------------------------------

class OutOfRange(InvalidInput):
    code = "out_of_range"

    def __init__(self, axis: str, value: float):
        super().__init__(f"{axis}={value!r} out of range", details={"axis": axis, "value": value})
        self.axis = axis
        self.value = value


class LengthMismatch(InvalidInput):
    code = "length_mismatch"


class NotIncreasing(InvalidInput):
    code = "not_increasing"

    def __init__(self, index: int):
        super().__init__(f"wavelengths not strictly increasing at index {index}", details={"index": index})
        self.index = index


class NonFinite(InvalidInput):
    code = "non_finite"

    def __init__(self, index: int, where: str = "values"):
        super().__init__(f"non-finite value in {where} at index {index}", details={"index": index, "where": where})
        self.index = index


class BadName(InvalidInput):
    code = "bad_name"


class BadTimestamp(InvalidInput):
    code = "bad_timestamp"


# --- storage -----------------------------------------------------------------

class UnknownVariable(NotFound):
    code = "unknown_variable"


class UnknownSite(NotFound):
    code = "unknown_site"


class DanglingReference(InvalidInput):
    code = "dangling_reference"

    def __init__(self, entity: str, entity_id: str):
        super().__init__(f"missing {entity} {entity_id!r}", details={"entity": entity, "id": entity_id})
        self.entity = entity
        self.entity_id = entity_id


# --- auth --------------------------------------------------------------------

class UsernameTaken(Conflict):
    code = "username_taken"


class BadCredentials(Unauthorized):
    code = "bad_credentials"


class NotApproved(Forbidden):
    code = "not_approved"


class BadSignature(Unauthorized):
    code = "bad_signature"


class Expired(Unauthorized):
    code = "expired"


class MissingToken(Unauthorized):
    code = "missing_token"


# --- ingestion ---------------------------------------------------------------

class MalformedHeader(InvalidInput):
    code = "malformed_header"


class BadRow(InvalidInput):
    code = "bad_row"


class UnknownVariableColumn(InvalidInput):
    code = "unknown_variable_column"


class BadCoordinate(InvalidInput):
    code = "bad_coordinate"


class BadSpectrum(InvalidInput):
    code = "bad_spectrum"


class BadMeasurement(InvalidInput):
    code = "bad_measurement"


class DuplicateId(Conflict):
    code = "duplicate_id"


class UnsupportedFormat(InvalidInput):
    code = "unsupported_format"


class BadGeoreference(InvalidInput):
    code = "bad_georeference"


class BadManifest(InvalidInput):
    code = "bad_manifest"


# --- raster ------------------------------------------------------------------

class DimensionMismatch(InvalidInput):
    code = "dimension_mismatch"


class Disabled(NotFound):
    code = "disabled"


class Building(NotFound):
    code = "building"


class TileOutOfRange(NotFound):
    code = "tile_out_of_range"


class UnknownLayer(NotFound):
    code = "unknown_layer"


# --- prediction --------------------------------------------------------------

class UnknownModel(NotFound):
    code = "unknown_model"


class NoTrainingData(InvalidInput):
    code = "no_training_data"

    def __init__(self, variable: str):
        super().__init__(f"no training measurement for variable {variable!r}", details={"variable": variable})
        self.variable = variable


class EmptyWavelengthIntersection(InvalidInput):
    code = "empty_wavelength_intersection"


class SpectrumOutOfRange(InvalidInput):
    code = "spectrum_out_of_range"
