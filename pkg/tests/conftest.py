"""Shared fixtures and random-data builders."""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

import pytest

from soilatlas import domain
from soilatlas.storage import Store

EPOCH = datetime(2022, 1, 1, tzinfo=timezone.utc)


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "data")
    yield s
    s.close()


def random_spectrum(rng: random.Random, n: int | None = None) -> domain.Spectrum:
    n = n or rng.randint(2, 8)
    start = rng.uniform(350, 450)
    wls = []
    w = start
    for _ in range(n):
        wls.append(round(w, 3))
        w += rng.uniform(0.5, 25)
    return domain.Spectrum(
        wavelengths=tuple(wls),
        values=tuple(round(rng.uniform(0, 1), 6) for _ in range(n)),
    )


def random_point(rng: random.Random) -> domain.GeoPoint:
    return domain.GeoPoint(lat=round(rng.uniform(44, 46), 6), lon=round(rng.uniform(8, 10), 6))


def make_lab(rng: random.Random, sample_id: str, variable_ids, site_ids) -> domain.LabSample:
    measured = rng.sample(variable_ids, k=rng.randint(0, len(variable_ids)))
    return domain.LabSample(
        id=sample_id,
        point=random_point(rng),
        spectrum=random_spectrum(rng),
        measurements=tuple(
            domain.Measurement(variable_id=v, value=round(rng.uniform(0, 100), 4))
            for v in measured
        ),
        site_ids=frozenset(rng.sample(site_ids, k=rng.randint(0, min(2, len(site_ids))))),
    )


def make_drone(rng: random.Random, sample_id: str, site_ids) -> domain.DroneSample:
    return domain.DroneSample(
        id=sample_id,
        point=random_point(rng),
        spectrum=random_spectrum(rng),
        acquired_at=EPOCH + timedelta(minutes=rng.randint(0, 400_000)),
        site_ids=frozenset(rng.sample(site_ids, k=rng.randint(0, min(2, len(site_ids))))),
    )


def seed_catalog(store: Store, n_vars=3, n_sites=3):
    """Creates variables var0..n and sites Site 0..n; returns their id lists."""
    variable_ids, site_ids = [], []
    for i in range(n_vars):
        vid = f"var{i}"
        store.put_variable(domain.Variable(id=vid, name=f"Property {i}", unit="%"))
        variable_ids.append(vid)
    for i in range(n_sites):
        sid = f"site{i}"
        store.put_site(domain.Site(id=sid, name=f"Site {i}"))
        site_ids.append(sid)
    return variable_ids, site_ids
