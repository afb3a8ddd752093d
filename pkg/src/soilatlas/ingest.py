"""Upload parsing and validation: single JSON records, massive CSV batches,
raster files, and predictor packages.

The CSV layout is self-describing. Fixed columns come first, everything else
is data:

    lab:    id, lat, lon [, sites] [, <variable name> ...] [, w<nm> ...]
    drone:  id, lat, lon, acquired_at [, sites] [, w<nm> ...]

``sites`` holds semicolon-separated site names. Spectral columns encode their
wavelength in the name (``w400``, ``w862.5``), so campaigns with different
band sets share one schema. An empty cell means "absent": rows may leave out
wavelengths or variables the header declares.

Parsing is row-atomic: a bad row is reported and skipped while the rest of
the batch proceeds. Header problems abort the whole batch, because a wrong
header poisons the interpretation of every row.
"""

from __future__ import annotations

import csv
import io
import json
import uuid
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from . import errors
from .domain import (
    ROLE_ADMIN,
    DroneSample,
    GeoPoint,
    LabSample,
    Measurement,
    PredictorMeta,
    Site,
    Spectrum,
    parse_timestamp,
    spectral_column_wavelength,
)
from .storage import COLLECTION_DRONE, COLLECTION_LAB, Store

_REQUIRED = {
    COLLECTION_LAB: ("id", "lat", "lon"),
    COLLECTION_DRONE: ("id", "lat", "lon", "acquired_at"),
}

# error code for rows that were valid on their own but thrown away because
# the caller asked for an all-or-nothing batch
BATCH_ABORTED = "batch_aborted"


@dataclass(frozen=True)
class RowError:
    """One rejected data row. Row numbers are 1-based and exclude the header."""

    row_number: int
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"row_number": self.row_number, "code": self.code, "message": self.message}


@dataclass
class BatchReport:
    """Outcome of a massive upload: accepted + rejected = data rows parsed."""

    accepted: int = 0
    rejected: int = 0
    row_errors: list[RowError] = field(default_factory=list)

    def reject(self, row_number: int, code: str, message: str) -> None:
        self.rejected += 1
        self.row_errors.append(RowError(row_number, code, message))

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "row_errors": [e.to_dict() for e in sorted(self.row_errors, key=lambda e: e.row_number)],
        }


@dataclass(frozen=True)
class _Header:
    """Resolved meaning of each CSV column."""

    index: dict[str, int]                    # fixed column name -> position
    sites_col: int | None
    variable_cols: tuple[tuple[int, str], ...]    # (position, variable id)
    spectral_cols: tuple[tuple[int, float], ...]  # (position, nm), ascending nm
    width: int


def _read_rows(stream) -> list[list[str]]:
    if isinstance(stream, bytes):
        text = stream.decode("utf-8-sig")
    elif isinstance(stream, str):
        text = stream.lstrip("﻿")
    else:
        text = stream.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8-sig")
    return [row for row in csv.reader(io.StringIO(text)) if row]


def _parse_header(columns: list[str], collection: str, variable_registry: Mapping[str, str]) -> _Header:
    required = _REQUIRED[collection]
    seen: dict[str, int] = {}
    for name in columns:
        seen[name] = seen.get(name, 0) + 1
    duplicates = sorted(n for n, c in seen.items() if c > 1)
    if duplicates:
        raise errors.MalformedHeader(f"duplicate columns: {', '.join(duplicates)}")
    missing = [n for n in required if n not in seen]
    if missing:
        raise errors.MalformedHeader(f"missing required columns: {', '.join(missing)}")

    index = {n: columns.index(n) for n in required}
    sites_col = columns.index("sites") if "sites" in seen else None
    variable_cols: list[tuple[int, str]] = []
    spectral: list[tuple[int, float]] = []
    unknown: list[str] = []
    for pos, name in enumerate(columns):
        if name in required or (sites_col is not None and pos == sites_col):
            continue
        nm = spectral_column_wavelength(name)
        if nm is not None:
            spectral.append((pos, nm))
        elif collection == COLLECTION_LAB and name in variable_registry:
            variable_cols.append((pos, variable_registry[name]))
        else:
            unknown.append(name)
    if unknown:
        raise errors.MalformedHeader(f"unknown columns: {', '.join(unknown)}")
    spectral.sort(key=lambda sc: sc[1])
    for (_, a), (_, b) in zip(spectral, spectral[1:]):
        if a == b:
            raise errors.MalformedHeader(f"wavelength {a:g} appears in two spectral columns")
    if not spectral:
        raise errors.MalformedHeader("at least one spectral column (w<nm>) is required")
    return _Header(
        index=index,
        sites_col=sites_col,
        variable_cols=tuple(variable_cols),
        spectral_cols=tuple(spectral),
        width=len(columns),
    )


def _cell_float(raw) -> float:
    # bools are ints to Python; they are never a coordinate or a reading
    if isinstance(raw, bool) or raw is None:
        raise ValueError(f"not a number: {raw!r}")
    return float(raw)


def _parse_point(lat_raw, lon_raw) -> GeoPoint:
    try:
        lat, lon = _cell_float(lat_raw), _cell_float(lon_raw)
    except ValueError:
        raise errors.BadCoordinate(f"lat/lon not numeric: {lat_raw!r}, {lon_raw!r}") from None
    try:
        return GeoPoint(lat=lat, lon=lon)
    except errors.OutOfRange as exc:
        raise errors.BadCoordinate(exc.message) from None


def _parse_spectrum(pairs: list[tuple[float, object]]) -> Spectrum:
    """pairs: (nm, raw cell) with empty cells already dropped, ascending nm."""
    if not pairs:
        raise errors.BadSpectrum("no spectral values in row")
    values = []
    for nm, raw in pairs:
        try:
            values.append(_cell_float(raw))
        except ValueError:
            raise errors.BadSpectrum(f"w{nm:g} is not numeric: {raw!r}") from None
    try:
        return Spectrum(wavelengths=tuple(nm for nm, _ in pairs), values=tuple(values))
    except errors.InvalidInput as exc:
        raise errors.BadSpectrum(exc.message) from None


def _parse_sites(raw: str, resolve_site: Callable[[str], str]) -> frozenset[str]:
    names = [n for n in str(raw).split(";") if n]
    return frozenset(resolve_site(n) for n in names)


def _parse_csv(
    stream,
    collection: str,
    variable_registry: Mapping[str, str],
    resolve_site: Callable[[str], str] | None,
) -> tuple[list, BatchReport]:
    rows = _read_rows(stream)
    if not rows:
        raise errors.MalformedHeader("empty input, expected a header row")
    header = _parse_header(rows[0], collection, variable_registry)
    data = rows[1:]
    resolve_site = resolve_site or (lambda name: name)

    # ids seen more than once poison every carrier, so acceptance cannot
    # depend on row order
    counts: dict[str, int] = {}
    for row in data:
        if len(row) == header.width:
            rid = row[header.index["id"]]
            if rid:
                counts[rid] = counts.get(rid, 0) + 1
    duplicated = {rid for rid, c in counts.items() if c > 1}

    report = BatchReport()
    samples = []
    for number, row in enumerate(data, start=1):
        try:
            samples.append(_parse_row(row, number, collection, header, duplicated, resolve_site))
            report.accepted += 1
        except errors.PlatformError as exc:
            report.reject(number, exc.code, exc.message)
    return samples, report


def _parse_row(row, number, collection, header: _Header, duplicated, resolve_site):
    if len(row) != header.width:
        raise errors.BadRow(f"expected {header.width} cells, got {len(row)}")
    sample_id = row[header.index["id"]]
    if not sample_id.strip():
        raise errors.BadName("sample id must be non-empty")
    if sample_id in duplicated:
        raise errors.DuplicateId(f"id {sample_id!r} appears more than once in the batch")
    point = _parse_point(row[header.index["lat"]], row[header.index["lon"]])
    spectrum = _parse_spectrum(
        [(nm, row[pos]) for pos, nm in header.spectral_cols if row[pos] != ""]
    )
    site_ids = (
        _parse_sites(row[header.sites_col], resolve_site)
        if header.sites_col is not None and row[header.sites_col]
        else frozenset()
    )
    if collection == COLLECTION_DRONE:
        acquired = _parse_acquired(row[header.index["acquired_at"]])
        return DroneSample(
            id=sample_id, point=point, spectrum=spectrum,
            acquired_at=acquired, site_ids=site_ids,
        )
    measurements = []
    for pos, variable_id in header.variable_cols:
        if row[pos] == "":
            continue
        try:
            value = _cell_float(row[pos])
            measurements.append(Measurement(variable_id=variable_id, value=value))
        except (ValueError, errors.NonFinite):
            raise errors.BadMeasurement(
                f"variable column at position {pos + 1} is not numeric: {row[pos]!r}"
            ) from None
    return LabSample(
        id=sample_id, point=point, spectrum=spectrum,
        measurements=tuple(measurements), site_ids=site_ids,
    )


def _parse_acquired(raw):
    if raw is None or (isinstance(raw, str) and not raw.strip()):
        raise errors.BadTimestamp("acquired_at must be present")
    return parse_timestamp(raw)


def parse_lab_csv(
    stream,
    variable_registry: Mapping[str, str],
    resolve_site: Callable[[str], str] | None = None,
) -> tuple[list[LabSample], BatchReport]:
    """Parse a lab CSV batch without touching storage.

    variable_registry maps exact variable names to ids; resolve_site maps a
    site name to a site id (names pass through unchanged when omitted).
    """
    return _parse_csv(stream, COLLECTION_LAB, variable_registry, resolve_site)


def parse_drone_csv(
    stream,
    resolve_site: Callable[[str], str] | None = None,
) -> tuple[list[DroneSample], BatchReport]:
    """Parse a drone CSV batch; same contract as the lab variant, no
    variable columns, acquired_at required."""
    return _parse_csv(stream, COLLECTION_DRONE, {}, resolve_site)


# --------------------------------------------------------------- persistence


class _SiteResolver:
    """Maps site names to ids, inventing ids for names the store lacks.

    Creation is deferred: only sites referenced by rows that actually land
    are written, so an aborted batch leaves no trace.
    """

    def __init__(self, store: Store):
        self.store = store
        self.pending: dict[str, Site] = {}   # casefolded name -> new site

    def __call__(self, name: str) -> str:
        existing = self.store.get_site_by_name(name)
        if existing is not None:
            return existing.id
        key = name.casefold()
        if key not in self.pending:
            self.pending[key] = Site(id=uuid.uuid4().hex, name=name)
        return self.pending[key].id

    def create_for(self, samples) -> None:
        used = {sid for s in samples for sid in s.site_ids}
        for site in self.pending.values():
            if site.id in used:
                self.store.put_site(site)


def ingest_batch(store: Store, collection: str, stream, atomic: bool = False) -> BatchReport:
    """Parse and persist a massive CSV upload.

    Row-atomic by default: bad rows are reported, good rows land in one
    storage transaction. With atomic=True any rejected row aborts the whole
    batch and the valid rows are reported as batch_aborted.
    """
    registry = {v.name: v.id for v in store.list_variables()}
    resolver = _SiteResolver(store)
    if collection == COLLECTION_LAB:
        samples, report = parse_lab_csv(stream, registry, resolver)
    elif collection == COLLECTION_DRONE:
        samples, report = parse_drone_csv(stream, resolver)
    else:
        raise errors.InvalidInput(f"unknown collection {collection!r}")

    # the parser numbered the rows; recover which numbers survived
    total = report.accepted + report.rejected
    rejected_numbers = {e.row_number for e in report.row_errors}
    survivors = [n for n in range(1, total + 1) if n not in rejected_numbers]

    keep = []
    for sample, number in zip(samples, survivors):
        if store.has_sample(collection, sample.id):
            report.accepted -= 1
            report.reject(number, errors.DuplicateId.code,
                          f"id {sample.id!r} already stored")
        else:
            keep.append(sample)

    if atomic and report.rejected:
        for sample, number in zip(samples, survivors):
            if not store.has_sample(collection, sample.id):
                report.accepted -= 1
                report.reject(number, BATCH_ABORTED,
                              "row valid but the batch was aborted by other errors")
        return report

    resolver.create_for(keep)
    store.put_samples(collection, keep)
    return report


_SINGLE_TYPES = (str, int, float)


def _record_to_sample(store: Store, collection: str, record: Mapping[str, object]):
    """Turn one JSON record (fields mirroring the CSV schema) into a sample.

    Returns (sample, resolver); the resolver still holds any sites the record
    named that do not exist yet, so the caller decides when they get created.
    """
    if collection not in _REQUIRED:
        raise errors.InvalidInput(f"unknown collection {collection!r}")
    if not isinstance(record, Mapping):
        raise errors.InvalidInput("record must be a JSON object")
    required = _REQUIRED[collection]
    registry = {v.name: v.id for v in store.list_variables()}

    spectral: list[tuple[float, object]] = []
    measurements: list[tuple[str, object]] = []
    for key, value in record.items():
        if key in required or key == "sites":
            continue
        nm = spectral_column_wavelength(str(key))
        if nm is not None:
            spectral.append((nm, value))
        elif collection == COLLECTION_LAB and key in registry:
            measurements.append((registry[key], value))
        else:
            raise errors.UnknownVariableColumn(f"unknown field {key!r}")
    missing = [k for k in required if k not in record]
    if missing:
        raise errors.MalformedHeader(f"missing required fields: {', '.join(missing)}")

    sample_id = str(record["id"])
    if not sample_id.strip():
        raise errors.BadName("sample id must be non-empty")

    point = _parse_point(record["lat"], record["lon"])
    spectral.sort(key=lambda p: p[0])
    spectrum = _parse_spectrum([(nm, v) for nm, v in spectral if v not in (None, "")])

    resolver = _SiteResolver(store)
    raw_sites = record.get("sites", "")
    if raw_sites and not isinstance(raw_sites, str):
        raise errors.InvalidInput("sites must be a semicolon-separated string")
    site_ids = _parse_sites(raw_sites, resolver) if raw_sites else frozenset()

    if collection == COLLECTION_DRONE:
        sample = DroneSample(
            id=sample_id, point=point, spectrum=spectrum,
            acquired_at=_parse_acquired(record["acquired_at"]), site_ids=site_ids,
        )
    else:
        fields = []
        for variable_id, value in measurements:
            try:
                fields.append(Measurement(variable_id=variable_id, value=_cell_float(value)))
            except (ValueError, errors.NonFinite):
                raise errors.BadMeasurement(f"value for {variable_id!r} is not numeric: {value!r}") from None
        sample = LabSample(
            id=sample_id, point=point, spectrum=spectrum,
            measurements=tuple(fields), site_ids=site_ids,
        )
    return sample, resolver


def ingest_single(store: Store, collection: str, record: Mapping[str, object]) -> str:
    """Persist one JSON record whose fields mirror the CSV schema.

    Values may be JSON numbers or strings; ``sites`` stays a semicolon-
    separated string, exactly as in the CSV cell.
    """
    sample, resolver = _record_to_sample(store, collection, record)
    if store.has_sample(collection, sample.id):
        raise errors.DuplicateId(f"id {sample.id!r} already stored")
    resolver.create_for([sample])
    store.put_sample(collection, sample)
    return sample.id


def replace_single(store: Store, collection: str, sample_id: str,
                   record: Mapping[str, object]) -> str:
    """Overwrite the stored sample with the given id; the record may omit it."""
    store.get_sample(collection, sample_id)
    merged = dict(record)
    merged.setdefault("id", sample_id)
    sample, resolver = _record_to_sample(store, collection, merged)
    resolver.create_for([sample])
    store.put_sample(collection, sample)
    return sample.id


# ------------------------------------------------------------------- rasters


def ingest_raster(rasters, name: str, data: bytes, actor_role: str, filename: str | None = None):
    """Decode an uploaded grid file and start its overview build.

    Returns (raster id, build job id). Admin only.
    """
    if actor_role != ROLE_ADMIN:
        raise errors.Forbidden("only administrators may upload rasters")
    meta, job_id = rasters.ingest(name=name, data=data, filename=filename)
    return meta.id, job_id


# ---------------------------------------------------------------- predictors


def _read_package(payload) -> tuple[dict, dict[str, bytes]]:
    """A predictor package is a bare JSON manifest or a zip holding
    manifest.json plus support files."""
    if isinstance(payload, str):
        payload = payload.encode()
    try:
        manifest = json.loads(payload)
        if not isinstance(manifest, dict):
            raise errors.BadManifest("manifest must be a JSON object")
        return manifest, {}
    except (json.JSONDecodeError, UnicodeDecodeError):
        pass
    try:
        archive = zipfile.ZipFile(io.BytesIO(payload))
    except zipfile.BadZipFile:
        raise errors.BadManifest("package is neither JSON nor a zip archive") from None
    names = archive.namelist()
    if "manifest.json" not in names:
        raise errors.BadManifest("zip package lacks manifest.json")
    try:
        manifest = json.loads(archive.read("manifest.json"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise errors.BadManifest("manifest.json is not valid JSON") from None
    if not isinstance(manifest, dict):
        raise errors.BadManifest("manifest must be a JSON object")
    files = {}
    for member in names:
        if member == "manifest.json" or member.endswith("/"):
            continue
        clean = Path(member)
        if clean.is_absolute() or ".." in clean.parts:
            raise errors.BadManifest(f"unsafe path in package: {member!r}")
        files[member] = archive.read(member)
    return manifest, files


def ingest_predictor(
    store: Store,
    payload,
    actor_role: str,
    packages_dir: str | Path | None = None,
) -> str:
    """Register a predictor from an uploaded package. Admin only.

    The manifest declares name, kind, hyperparameters and the names of the
    variables the model estimates; external kinds add the command to run.
    """
    if actor_role != ROLE_ADMIN:
        raise errors.Forbidden("only administrators may upload predictors")
    manifest, files = _read_package(payload)

    name = manifest.get("name")
    if not isinstance(name, str) or not name.strip():
        raise errors.BadManifest("manifest must declare a non-empty name")
    kind = manifest.get("kind")
    declared = manifest.get("variables")
    if not isinstance(declared, list) or not declared:
        raise errors.BadManifest("manifest must declare a non-empty variables list")
    variable_ids = []
    for vname in declared:
        var = store.get_variable_by_name(str(vname))
        if var is None:
            raise errors.BadManifest(f"unknown variable {vname!r}")
        variable_ids.append(var.id)
    variable_ids = sorted(set(variable_ids))

    hyper = manifest.get("hyperparameters", {})
    if not isinstance(hyper, dict):
        raise errors.BadManifest("hyperparameters must be an object")
    hyper = dict(hyper)
    hyper["variables"] = variable_ids
    if kind == "external":
        command = manifest.get("command")
        if not isinstance(command, (str, list)) or not command:
            raise errors.BadManifest("external predictors must declare a command")
        hyper["manifest"] = {"command": command, "variables": variable_ids}

    model_id = uuid.uuid4().hex
    try:
        meta = PredictorMeta(id=model_id, name=name, kind=kind, hyperparameters=hyper)
    except errors.InvalidInput as exc:
        raise errors.BadManifest(exc.message) from None
    store.put_model(meta)

    if files and packages_dir is not None:
        target = Path(packages_dir) / model_id
        target.mkdir(parents=True, exist_ok=True)
        for member, blob in files.items():
            dest = target / member
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(blob)
    return model_id
