"""Read-side services: feature collections for the map, CSV export, and
per-record detail.

Layers name their data source:

    lab:<variable_id>              lab samples, carrying that variable's value
    drone                          raw drone acquisitions
    pred:<model_id>:<variable_id>  drone samples with an estimate by that model

Feature properties hold the popup payload (ids, site names, measured or
estimated values); spectra are deliberately left to the detail endpoint to
keep map responses small.
"""

from __future__ import annotations

import csv
import io
from dataclasses import replace

from . import errors
from .domain import DroneSample, LabSample, format_float, format_timestamp
from .storage import (
    COLLECTION_DRONE,
    COLLECTION_LAB,
    FilterSpec,
    Page,
    SortSpec,
    Store,
)

_PAGE_LIMIT = 10000


def _all_matching(
    store: Store,
    collection: str,
    flt: FilterSpec | None,
    sort: SortSpec | None = None,
) -> list[LabSample | DroneSample]:
    """Every matching sample in order, walking past the page cap."""
    out: list = []
    while True:
        total, chunk = store.query_samples(
            collection, flt, sort, Page(offset=len(out), limit=_PAGE_LIMIT)
        )
        out.extend(chunk)
        if len(out) >= total or not chunk:
            return out


def _merge_bbox(flt: FilterSpec | None, bbox) -> FilterSpec | None:
    """Fold an extra bbox into the filter; None when the boxes cannot meet."""
    flt = flt or FilterSpec()
    if bbox is None:
        return flt
    try:
        bbox = tuple(float(v) for v in bbox)
    except (TypeError, ValueError):
        raise errors.InvalidInput(f"bbox must be numeric: {bbox!r}") from None
    if len(bbox) != 4:
        raise errors.InvalidInput(f"bbox needs 4 numbers, got {len(bbox)}")
    if flt.bbox is not None:
        bbox = (
            max(flt.bbox[0], bbox[0]),
            max(flt.bbox[1], bbox[1]),
            min(flt.bbox[2], bbox[2]),
            min(flt.bbox[3], bbox[3]),
        )
    if bbox[0] > bbox[2] or bbox[1] > bbox[3]:
        return None
    return replace(flt, bbox=bbox)


def _feature(sample, properties: dict) -> dict:
    return {
        "type": "Feature",
        "geometry": {
            "type": "Point",
            "coordinates": [sample.point.lon, sample.point.lat],
        },
        "properties": properties,
    }


def _collection(features: list[dict]) -> dict:
    return {"type": "FeatureCollection", "features": features}


def features_for_layer(
    store: Store,
    layer: str,
    bbox: tuple[float, float, float, float] | None = None,
    flt: FilterSpec | None = None,
) -> dict:
    """GeoJSON FeatureCollection for one map layer, filtered and clipped."""
    effective = _merge_bbox(flt, bbox)
    if effective is None:
        return _collection([])
    variable_names = {v.id: v.name for v in store.list_variables()}
    site_names = {s.id: s.name for s in store.list_sites()}

    def sites_of(sample) -> list[str]:
        return sorted(site_names[sid] for sid in sample.site_ids)

    if layer == "drone":
        samples = _all_matching(store, COLLECTION_DRONE, effective)
        return _collection([
            _feature(s, {
                "id": s.id,
                "collection": "drone",
                "sites": sites_of(s),
                "acquired_at": format_timestamp(s.acquired_at),
            })
            for s in samples
        ])

    if layer.startswith("lab:"):
        variable_id = layer[len("lab:"):]
        try:
            var = store.get_variable(variable_id)
        except errors.UnknownVariable:
            raise errors.UnknownLayer(f"no variable {variable_id!r} behind layer {layer!r}") from None
        samples = _all_matching(store, COLLECTION_LAB, effective)
        features = []
        for s in samples:
            properties = {
                "id": s.id,
                "collection": "lab",
                "sites": sites_of(s),
                "measurements": {
                    variable_names[m.variable_id]: m.value for m in s.measurements
                },
            }
            measured = s.measurement_for(var.id)
            if measured is not None:
                properties["variable"] = var.name
                properties["value"] = measured.value
            features.append(_feature(s, properties))
        return _collection(features)

    if layer.startswith("pred:"):
        model_id, sep, variable_id = layer[len("pred:"):].partition(":")
        if not sep or not model_id or not variable_id:
            raise errors.UnknownLayer(f"prediction layers are pred:<model>:<variable>, got {layer!r}")
        try:
            meta, _ = store.get_model(model_id)
            var = store.get_variable(variable_id)
        except (errors.UnknownModel, errors.UnknownVariable) as exc:
            raise errors.UnknownLayer(exc.message) from None
        estimates = {
            p.drone_sample_id: p
            for p in store.predictions_for(model_id=model_id, variable_id=variable_id)
        }
        samples = _all_matching(store, COLLECTION_DRONE, effective)
        features = []
        for s in samples:
            p = estimates.get(s.id)
            if p is None:
                continue
            features.append(_feature(s, {
                "id": s.id,
                "collection": "drone",
                "sites": sites_of(s),
                "acquired_at": format_timestamp(s.acquired_at),
                "variable": var.name,
                "value": p.value,
                "model": meta.name,
                "model_id": meta.id,
            }))
        return _collection(features)

    raise errors.UnknownLayer(f"unknown layer {layer!r}")


# -------------------------------------------------------------------- export


def _wavelength_column(nm: float) -> str:
    if nm == int(nm):
        return f"w{int(nm)}"
    return "w" + format_float(nm)


def export_csv(
    store: Store,
    collection: str,
    flt: FilterSpec | None = None,
    sort: SortSpec | None = None,
) -> str:
    """Render matching samples as CSV in the upload schema.

    Variable and spectral columns are the union over the exported rows, so
    the file is self-contained and re-importable. Identical inputs yield
    byte-identical output.
    """
    samples = _all_matching(store, collection, flt, sort)
    variable_names = {v.id: v.name for v in store.list_variables()}
    site_names = {s.id: s.name for s in store.list_sites()}

    is_lab = collection == COLLECTION_LAB
    used_variables: set[str] = set()
    wavelengths: set[float] = set()
    for s in samples:
        wavelengths.update(s.spectrum.wavelengths)
        if is_lab:
            used_variables.update(m.variable_id for m in s.measurements)
    variable_columns = sorted(variable_names[vid] for vid in used_variables)
    name_to_id = {variable_names[vid]: vid for vid in used_variables}
    wavelength_columns = sorted(wavelengths)

    header = ["id", "lat", "lon"]
    if not is_lab:
        header.append("acquired_at")
    header.append("sites")
    header.extend(variable_columns)
    header.extend(_wavelength_column(nm) for nm in wavelength_columns)

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    for s in samples:
        row = [s.id, format_float(s.point.lat), format_float(s.point.lon)]
        if not is_lab:
            row.append(format_timestamp(s.acquired_at))
        row.append(";".join(sorted(site_names[sid] for sid in s.site_ids)))
        if is_lab:
            by_variable = {m.variable_id: m.value for m in s.measurements}
            for name in variable_columns:
                value = by_variable.get(name_to_id[name])
                row.append("" if value is None else format_float(value))
        by_nm = dict(zip(s.spectrum.wavelengths, s.spectrum.values))
        for nm in wavelength_columns:
            value = by_nm.get(nm)
            row.append("" if value is None else format_float(value))
        writer.writerow(row)
    return buffer.getvalue()


# -------------------------------------------------------------------- detail


def sample_detail(store: Store, collection: str, sample_id: str) -> dict:
    """Full record for one sample: geometry, sites, spectrum, and either the
    measurements (lab) or every stored prediction (drone)."""
    sample = store.get_sample(collection, sample_id)
    variable_names = {v.id: v.name for v in store.list_variables()}
    detail = {
        "id": sample.id,
        "collection": collection,
        "lat": sample.point.lat,
        "lon": sample.point.lon,
        "sites": sorted(store.get_site(sid).name for sid in sample.site_ids),
        "spectrum": {
            "wavelengths": list(sample.spectrum.wavelengths),
            "values": list(sample.spectrum.values),
        },
    }
    if collection == COLLECTION_LAB:
        detail["measurements"] = {
            variable_names[m.variable_id]: m.value for m in sample.measurements
        }
        return detail
    detail["acquired_at"] = format_timestamp(sample.acquired_at)
    model_names = {meta.id: meta.name for meta, _ in store.list_models()}
    detail["predictions"] = [
        {
            "model_id": p.model_id,
            "model": model_names.get(p.model_id, p.model_id),
            "variable_id": p.variable_id,
            "variable": variable_names.get(p.variable_id, p.variable_id),
            "value": p.value,
            "created_at": format_timestamp(p.created_at),
        }
        for p in sorted(
            store.predictions_for(drone_sample_id=sample.id),
            key=lambda p: (p.model_id, p.variable_id),
        )
    ]
    return detail
