"""Core value objects shared by every other module.

All types are immutable dataclasses that validate at construction time, so an
instance that exists is guaranteed to satisfy its invariants and can be shared
freely across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

from . import errors

ROLE_REGISTERED = "registered"
ROLE_ADMIN = "admin"
ROLES = (ROLE_REGISTERED, ROLE_ADMIN)

PREDICTOR_KINDS = ("mean", "knn", "external")

# Column names the CSV schemas claim for themselves; a soil variable may not
# shadow them (see ingest).
RESERVED_COLUMNS = frozenset({"id", "lat", "lon", "sites", "acquired_at"})
_SPECTRAL_COLUMN_RE = re.compile(r"^w\d+(\.\d+)?$")


def _finite(x) -> bool:
    try:
        return math.isfinite(float(x))
    except (TypeError, ValueError):
        return False


def format_float(x: float) -> str:
    """Shortest decimal representation that round-trips to the same float."""
    return repr(float(x))


def spectral_column_wavelength(name: str) -> float | None:
    """Wavelength in nm encoded by a ``w<nm>`` column name, else None."""
    if _SPECTRAL_COLUMN_RE.match(name):
        return float(name[1:])
    return None


def parse_timestamp(text) -> datetime:
    """Parse an ISO-8601 date or date-time into an aware UTC datetime.

    Naive inputs are interpreted as UTC. Raises BadTimestamp on anything
    unparseable.
    """
    if isinstance(text, datetime):
        dt = text
    else:
        if not isinstance(text, str) or not text.strip():
            raise errors.BadTimestamp(f"not a timestamp: {text!r}")
        raw = text.strip()
        if raw.endswith(("Z", "z")):
            raw = raw[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(raw)
        except ValueError:
            raise errors.BadTimestamp(f"not ISO-8601: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Canonical UTC rendering, second precision unless sub-seconds exist."""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 position. lat in [-90, 90], lon in [-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self):
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        if not _finite(self.lat) or not -90.0 <= self.lat <= 90.0:
            raise errors.OutOfRange("lat", self.lat)
        if not _finite(self.lon) or not -180.0 <= self.lon <= 180.0:
            raise errors.OutOfRange("lon", self.lon)


def validate_point(lat: float, lon: float) -> GeoPoint:
    return GeoPoint(lat=lat, lon=lon)


@dataclass(frozen=True)
class Spectrum:
    """A sampled reflectance signal on an explicit wavelength grid (nm)."""

    wavelengths: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        wl = tuple(float(w) for w in self.wavelengths)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", vals)
        if len(wl) != len(vals):
            raise errors.LengthMismatch(f"{len(wl)} wavelengths vs {len(vals)} values")
        if len(wl) < 1:
            raise errors.LengthMismatch("empty spectrum")
        for i, w in enumerate(wl):
            if not _finite(w):
                raise errors.NonFinite(i, where="wavelengths")
            if i and wl[i - 1] >= w:
                raise errors.NotIncreasing(i)
        for i, v in enumerate(vals):
            if not _finite(v):
                raise errors.NonFinite(i, where="values")

    def __len__(self) -> int:
        return len(self.wavelengths)

    @property
    def wl_min(self) -> float:
        return self.wavelengths[0]

    @property
    def wl_max(self) -> float:
        return self.wavelengths[-1]


def validate_spectrum(wavelengths: Sequence[float], values: Sequence[float]) -> Spectrum:
    return Spectrum(wavelengths=tuple(wavelengths), values=tuple(values))


@dataclass(frozen=True)
class Variable:
    """A soil property that can be measured or predicted. Variables are data,
    not schema: campaigns add and drop them freely."""

    id: str
    name: str
    unit: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise errors.BadName("variable id must be non-empty")
        if not self.name or not self.name.strip():
            raise errors.BadName("variable name must be non-empty")
        if self.name in RESERVED_COLUMNS:
            raise errors.BadName(f"variable name {self.name!r} is a reserved column")
        if _SPECTRAL_COLUMN_RE.match(self.name):
            raise errors.BadName(f"variable name {self.name!r} collides with spectral columns")


@dataclass(frozen=True)
class Measurement:
    variable_id: str
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not _finite(self.value):
            raise errors.NonFinite(0, where="measurement")


@dataclass(frozen=True)
class Site:
    """Named logical grouping of acquisitions (a campaign or a field)."""

    id: str
    name: str

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise errors.BadName("site id must be non-empty")
        if not self.name or not self.name.strip():
            raise errors.BadName("site name must be non-empty")
        if ";" in self.name:
            raise errors.BadName("site name may not contain ';' (CSV list separator)")


def _dedup_measurements(measurements: Iterable[Measurement]) -> tuple[Measurement, ...]:
    # Last write wins per variable, output ordered by variable_id for determinism.
    by_var: dict[str, Measurement] = {}
    for m in measurements:
        by_var[m.variable_id] = m
    return tuple(by_var[k] for k in sorted(by_var))


@dataclass(frozen=True)
class LabSample:
    """Controlled-environment acquisition: a spectrum plus expert-measured
    soil properties. These are the training rows for the predictors."""

    id: str
    point: GeoPoint
    spectrum: Spectrum
    measurements: tuple[Measurement, ...] = ()
    site_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise errors.BadName("sample id must be non-empty")
        object.__setattr__(self, "measurements", _dedup_measurements(self.measurements))
        object.__setattr__(self, "site_ids", frozenset(self.site_ids))

    def measurement_for(self, variable_id: str) -> Measurement | None:
        for m in self.measurements:
            if m.variable_id == variable_id:
                return m
        return None


@dataclass(frozen=True)
class DroneSample:
    """In-the-wild acquisition loaded at test time, awaiting predictions."""

    id: str
    point: GeoPoint
    spectrum: Spectrum
    acquired_at: datetime
    site_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise errors.BadName("sample id must be non-empty")
        object.__setattr__(self, "acquired_at", parse_timestamp(self.acquired_at))
        object.__setattr__(self, "site_ids", frozenset(self.site_ids))


@dataclass(frozen=True)
class Prediction:
    """A value estimated by one model for one variable on one drone sample."""

    drone_sample_id: str
    model_id: str
    variable_id: str
    value: float
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not _finite(self.value):
            raise errors.NonFinite(0, where="prediction")
        object.__setattr__(self, "created_at", parse_timestamp(self.created_at))

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.drone_sample_id, self.model_id, self.variable_id)


@dataclass(frozen=True)
class PredictorMeta:
    """Registry entry for a predictive model."""

    id: str
    name: str
    kind: str
    hyperparameters: Mapping[str, object] = field(default_factory=dict)
    trained_variables: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise errors.BadName("model id must be non-empty")
        if not self.name or not self.name.strip():
            raise errors.BadName("model name must be non-empty")
        if self.kind not in PREDICTOR_KINDS:
            raise errors.InvalidInput(f"unknown predictor kind {self.kind!r}")
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))
        object.__setattr__(self, "trained_variables", frozenset(self.trained_variables))
        if self.kind == "knn":
            k = self.hyperparameters.get("k")
            if not isinstance(k, int) or isinstance(k, bool) or k < 1:
                raise errors.InvalidInput(f"knn requires integer hyperparameter k >= 1, got {k!r}")

    @property
    def k(self) -> int | None:
        k = self.hyperparameters.get("k")
        return int(k) if isinstance(k, int) and not isinstance(k, bool) else None


@dataclass(frozen=True)
class UserAccount:
    id: str
    username: str
    password_digest: bytes
    role: str = ROLE_REGISTERED
    approved: bool = False

    def __post_init__(self):
        if not self.username or not self.username.strip():
            raise errors.BadName("username must be non-empty")
        if self.role not in ROLES:
            raise errors.InvalidInput(f"unknown role {self.role!r}")
        if not isinstance(self.password_digest, (bytes, bytearray)) or not self.password_digest:
            raise errors.InvalidInput("password digest must be non-empty bytes")
        object.__setattr__(self, "password_digest", bytes(self.password_digest))
