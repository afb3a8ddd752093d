"""Value-object construction rules."""

from __future__ import annotations

from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from soilatlas import domain, errors


class TestGeoPoint:
    @pytest.mark.parametrize("lat,lon", [(0, 0), (-90, -180), (90, 180), (45.5, 9.25)])
    def test_accepts_valid(self, lat, lon):
        p = domain.GeoPoint(lat=lat, lon=lon)
        assert (p.lat, p.lon) == (float(lat), float(lon))

    @pytest.mark.parametrize(
        "lat,lon",
        [(90.0001, 0), (-90.0001, 0), (0, 180.0001), (0, -180.0001),
         (float("nan"), 0), (0, float("inf"))],
    )
    def test_rejects_out_of_range(self, lat, lon):
        with pytest.raises(errors.OutOfRange):
            domain.GeoPoint(lat=lat, lon=lon)

    @given(st.floats(allow_nan=True, allow_infinity=True),
           st.floats(allow_nan=True, allow_infinity=True))
    def test_accept_iff_in_range(self, lat, lon):
        import math
        valid = (
            math.isfinite(lat) and math.isfinite(lon)
            and -90 <= lat <= 90 and -180 <= lon <= 180
        )
        if valid:
            domain.GeoPoint(lat=lat, lon=lon)
        else:
            with pytest.raises(errors.OutOfRange):
                domain.GeoPoint(lat=lat, lon=lon)


class TestSpectrum:
    def test_accepts_increasing(self):
        s = domain.Spectrum(wavelengths=(400.0, 410.0, 420.0), values=(0.1, 0.2, 0.3))
        assert s.wl_min == 400.0 and s.wl_max == 420.0

    def test_rejects_length_mismatch(self):
        with pytest.raises(errors.LengthMismatch):
            domain.Spectrum(wavelengths=(400.0, 410.0), values=(0.1,))

    def test_rejects_non_increasing(self):
        with pytest.raises(errors.NotIncreasing):
            domain.Spectrum(wavelengths=(400.0, 400.0), values=(0.1, 0.2))
        with pytest.raises(errors.NotIncreasing):
            domain.Spectrum(wavelengths=(410.0, 400.0), values=(0.1, 0.2))

    def test_rejects_empty(self):
        with pytest.raises(errors.InvalidInput):
            domain.Spectrum(wavelengths=(), values=())

    def test_rejects_non_finite(self):
        with pytest.raises(errors.NonFinite):
            domain.Spectrum(wavelengths=(400.0, 410.0), values=(0.1, float("nan")))
        with pytest.raises(errors.NonFinite):
            domain.Spectrum(wavelengths=(400.0, float("inf")), values=(0.1, 0.2))

    @given(st.lists(st.floats(min_value=100, max_value=3000,
                              allow_nan=False, allow_infinity=False), min_size=1, max_size=30))
    def test_accept_iff_strictly_increasing(self, wls):
        values = tuple(0.5 for _ in wls)
        increasing = all(a < b for a, b in zip(wls, wls[1:]))
        if increasing:
            s = domain.Spectrum(wavelengths=tuple(wls), values=values)
            assert list(s.wavelengths) == wls
        else:
            with pytest.raises(errors.NotIncreasing):
                domain.Spectrum(wavelengths=tuple(wls), values=values)


class TestTimestamps:
    def test_parses_utc_z(self):
        dt = domain.parse_timestamp("2022-04-05T10:30:00Z")
        assert dt == datetime(2022, 4, 5, 10, 30, tzinfo=timezone.utc)

    def test_naive_treated_as_utc(self):
        dt = domain.parse_timestamp("2022-04-05T10:30:00")
        assert dt.tzinfo is not None and dt.utcoffset().total_seconds() == 0

    def test_offset_normalized_to_utc(self):
        dt = domain.parse_timestamp("2022-04-05T12:30:00+02:00")
        assert domain.format_timestamp(dt) == "2022-04-05T10:30:00Z"

    def test_bare_date(self):
        dt = domain.parse_timestamp("2022-04-05")
        assert domain.format_timestamp(dt) == "2022-04-05T00:00:00Z"

    @pytest.mark.parametrize("bad", ["", "   ", "yesterday", "2022-13-01", "05/04/2022", None, 42])
    def test_rejects_garbage(self, bad):
        with pytest.raises(errors.BadTimestamp):
            domain.parse_timestamp(bad)

    @given(st.datetimes(min_value=datetime(1970, 1, 1), max_value=datetime(2100, 1, 1)))
    def test_format_parse_round_trip(self, dt):
        aware = dt.replace(tzinfo=timezone.utc)
        assert domain.parse_timestamp(domain.format_timestamp(aware)) == aware


class TestFloatFormat:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_round_trips_exactly(self, x):
        assert float(domain.format_float(x)) == x


class TestVariable:
    def test_rejects_reserved_name(self):
        for name in ("id", "lat", "lon", "sites", "acquired_at"):
            with pytest.raises(errors.BadName):
                domain.Variable(id="v", name=name)

    def test_rejects_spectral_pattern_name(self):
        with pytest.raises(errors.BadName):
            domain.Variable(id="v", name="w550")
        with pytest.raises(errors.BadName):
            domain.Variable(id="v", name="w550.5")

    def test_accepts_normal_names(self):
        assert domain.Variable(id="v", name="Argilla", unit="%").name == "Argilla"
        # not the spectral pattern: unit suffix makes it a plain word
        assert domain.Variable(id="v", name="w550nm").name == "w550nm"


class TestSite:
    def test_rejects_semicolon(self):
        with pytest.raises(errors.BadName):
            domain.Site(id="s", name="a;b")

    def test_rejects_blank(self):
        with pytest.raises(errors.BadName):
            domain.Site(id="s", name="   ")


class TestLabSample:
    def _mk(self, measurements):
        return domain.LabSample(
            id="L1",
            point=domain.GeoPoint(45, 9),
            spectrum=domain.Spectrum((400.0, 500.0), (0.1, 0.2)),
            measurements=measurements,
        )

    def test_dedup_last_write_wins(self):
        s = self._mk((
            domain.Measurement("a", 1.0),
            domain.Measurement("b", 2.0),
            domain.Measurement("a", 3.0),
        ))
        assert s.measurement_for("a").value == 3.0
        assert [m.variable_id for m in s.measurements] == ["a", "b"]

    @given(st.lists(st.tuples(st.sampled_from("abcd"),
                              st.floats(-1e6, 1e6, allow_nan=False)), max_size=12))
    def test_dedup_is_deterministic_and_complete(self, pairs):
        ms = tuple(domain.Measurement(v, x) for v, x in pairs)
        s1, s2 = self._mk(ms), self._mk(ms)
        assert s1.measurements == s2.measurements
        last = {}
        for v, x in pairs:
            last[v] = x
        assert {m.variable_id: m.value for m in s1.measurements} == last
        assert [m.variable_id for m in s1.measurements] == sorted(last)

    def test_rejects_blank_id(self):
        with pytest.raises(errors.BadName):
            domain.LabSample(
                id=" ", point=domain.GeoPoint(0, 0),
                spectrum=domain.Spectrum((1.0,), (0.0,)),
            )


class TestMeasurementAndPrediction:
    def test_measurement_rejects_nan(self):
        with pytest.raises(errors.NonFinite):
            domain.Measurement("v", float("nan"))

    def test_prediction_rejects_inf(self):
        with pytest.raises(errors.NonFinite):
            domain.Prediction("d", "m", "v", float("inf"))

    def test_prediction_key(self):
        p = domain.Prediction("d1", "m1", "v1", 4.2)
        assert p.key == ("d1", "m1", "v1")


class TestPredictorMeta:
    def test_knn_requires_k(self):
        with pytest.raises(errors.InvalidInput):
            domain.PredictorMeta(id="m", name="knn", kind="knn")
        with pytest.raises(errors.InvalidInput):
            domain.PredictorMeta(id="m", name="knn", kind="knn", hyperparameters={"k": 0})
        with pytest.raises(errors.InvalidInput):
            domain.PredictorMeta(id="m", name="knn", kind="knn", hyperparameters={"k": True})
        ok = domain.PredictorMeta(id="m", name="knn", kind="knn", hyperparameters={"k": 3})
        assert ok.k == 3

    def test_rejects_unknown_kind(self):
        with pytest.raises(errors.InvalidInput):
            domain.PredictorMeta(id="m", name="x", kind="forest")


class TestUserAccount:
    def test_role_must_be_known(self):
        with pytest.raises(errors.InvalidInput):
            domain.UserAccount(id="u", username="bob", password_digest=b"x", role="root")

    def test_digest_must_be_bytes(self):
        with pytest.raises(errors.InvalidInput):
            domain.UserAccount(id="u", username="bob", password_digest="hunter2")
