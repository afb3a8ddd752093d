"""REST surface tests: the role grid, the closed surface, upload flows,
query parameter plumbing and the error envelope."""

import json

import pytest
from fastapi.testclient import TestClient

from soilatlas import errors
from soilatlas.auth import AuthService
from soilatlas.config import Config
from soilatlas.httpapi import ROUTES, build_services, create_app

ADMIN = ("root", "root-pw-1")
USER = ("alice", "alice-pw-1")
SECRET = "unit-test-secret"

LAB_CSV = (
    "id,lat,lon,sites,Argilla,w400,w410\n"
    "DL-060101,45.31,9.50,Lodi,321.0,0.10,0.11\n"
    "DL-060102,45.32,9.51,Lodi,180.0,0.20,0.21\n"
    "DL-060103,44.90,8.20,Asti,450.0,0.30,0.31\n"
)

DRONE_CSV = (
    "id,lat,lon,acquired_at,sites,w400,w410\n"
    "D-001,45.31,9.50,2022-04-05T10:00:00Z,Lodi,0.10,0.12\n"
    "D-002,45.32,9.51,2022-05-14T23:00:00Z,Lodi,0.20,0.22\n"
    "D-003,44.90,8.20,2022-06-01T00:00:00Z,Asti,0.30,0.32\n"
)

ASCII_GRID = (
    "ncols 4\nnrows 3\nxllcorner 9.0\nyllcorner 45.0\n"
    "cellsize 0.25\nNODATA_value -9999\n"
    "1 2 3 4\n5 6 7 8\n9 10 11 12\n"
)


@pytest.fixture()
def services(tmp_path):
    cfg = Config(
        data_dir=str(tmp_path / "data"),
        auth_secret=SECRET,
        bootstrap_admin_user=ADMIN[0],
        bootstrap_admin_password=ADMIN[1],
    )
    return build_services(cfg, synchronous_jobs=True)


@pytest.fixture()
def client(services):
    app = create_app(services)
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def login(client, username, password) -> str:
    r = client.post("/auth/login", json={"username": username, "password": password})
    assert r.status_code == 200, r.text
    return r.json()["token"]


def bearer(token) -> dict:
    return {"Authorization": f"Bearer {token}"}


@pytest.fixture()
def admin_h(client):
    return bearer(login(client, *ADMIN))


@pytest.fixture()
def user_h(client, admin_h):
    r = client.post("/auth/register", json={"username": USER[0], "password": USER[1]})
    assert r.status_code == 201
    r = client.post(f"/admin/approve/{USER[0]}", headers=admin_h)
    assert r.status_code == 200
    return bearer(login(client, *USER))


def make_variable(client, admin_h, name, unit="g/kg"):
    r = client.post("/admin/variables", json={"name": name, "unit": unit}, headers=admin_h)
    assert r.status_code == 201, r.text
    return r.json()["id"]


class TestAuthFlow:
    def test_register_then_login_needs_approval(self, client):
        r = client.post("/auth/register", json={"username": "bob", "password": "pw123456"})
        assert r.status_code == 201
        assert r.json()["approved"] is False
        r = client.post("/auth/login", json={"username": "bob", "password": "pw123456"})
        assert r.status_code == 403
        assert r.json()["code"] == "not_approved"

    def test_approval_unlocks_login(self, client, admin_h):
        client.post("/auth/register", json={"username": "bob", "password": "pw123456"})
        r = client.post("/admin/approve/bob", headers=admin_h)
        assert r.status_code == 200 and r.json()["approved"] is True
        token = login(client, "bob", "pw123456")
        r = client.get("/api/variables", headers=bearer(token))
        assert r.status_code == 200

    def test_wrong_password_and_unknown_user_are_identical(self, client, admin_h):
        client.post("/auth/register", json={"username": "bob", "password": "pw123456"})
        client.post("/admin/approve/bob", headers=admin_h)
        wrong = client.post("/auth/login", json={"username": "bob", "password": "nope-nope"})
        ghost = client.post("/auth/login", json={"username": "ghost", "password": "nope-nope"})
        assert wrong.status_code == ghost.status_code == 401
        assert wrong.json() == ghost.json()

    def test_duplicate_username_conflicts(self, client):
        client.post("/auth/register", json={"username": "bob", "password": "pw123456"})
        r = client.post("/auth/register", json={"username": "Bob", "password": "pw123456"})
        assert r.status_code == 409
        assert r.json()["code"] == "username_taken"

    def test_tampered_token_rejected_even_on_anonymous_route(self, client, admin_h):
        token = login(client, *ADMIN)
        head, payload, sig = token.split(".")
        forged = f"{head}.{payload}.{'A' * len(sig)}"
        r = client.get("/features/drone", headers=bearer(forged))
        assert r.status_code == 401
        assert r.json()["code"] == "bad_signature"

    def test_expired_token_rejected(self, client, services):
        # same secret and store, but a clock far in the past signs tokens
        # whose exp is already behind the live service
        stale = AuthService(
            services.store, SECRET, token_ttl_seconds=60,
            clock=lambda: 1_000_000.0,
        )
        token = stale.login(*ADMIN)
        r = client.get("/api/variables", headers=bearer(token))
        assert r.status_code == 401
        assert r.json()["code"] == "expired"

    def test_malformed_authorization_header(self, client):
        r = client.get("/api/variables", headers={"Authorization": "Basic abc"})
        assert r.status_code == 401

    def test_missing_token_on_protected_route(self, client):
        r = client.get("/api/lab")
        assert r.status_code == 401
        assert r.json()["code"] == "missing_token"
        assert r.headers.get("www-authenticate") == "Bearer"


def _fill_path(path: str) -> str:
    return (
        path.replace("{layer}", "drone")
        .replace("{raster}", "no-such-raster")
        .replace("{z}/{x}/{y}.png", "0/0/0.png")
        .replace("{sample_id}", "no-such-sample")
        .replace("{username}", "no-such-user")
        .replace("{model_id}", "no-such-model")
        .replace("{job_id}", "no-such-job")
        .replace("{raster_id}", "no-such-raster")
    )


class TestAuthMatrix:
    """Every (endpoint, role) cell of the access grid, no sampling.

    A cell counts as denied only when the guard rejected it (missing_token
    or forbidden); domain-level 401s such as bad_credentials on the login
    route are business responses, not access control.
    """

    RANK = {"anonymous": 0, "registered": 1, "admin": 2}

    def request(self, client, route, headers):
        url = _fill_path(route.path)
        kwargs = {"headers": headers}
        if route.method in ("POST", "PUT", "PATCH"):
            kwargs["content"] = b"{}"
            kwargs["headers"] = {**headers, "Content-Type": "application/json"}
        return client.request(route.method, url, **kwargs)

    def assert_allowed(self, route, r):
        denied = (
            (r.status_code == 401 and r.json().get("code") == "missing_token")
            or (r.status_code == 403 and r.json().get("code") == "forbidden")
        )
        assert not denied, f"{route.method} {route.path}: {r.text}"
        assert r.status_code < 500, f"{route.method} {route.path}: {r.text}"

    @pytest.mark.parametrize("route", ROUTES, ids=lambda r: f"{r.method} {r.path}")
    def test_anonymous(self, client, route):
        r = self.request(client, route, {})
        if self.RANK[route.min_role] > 0:
            assert r.status_code == 401, f"{route.method} {route.path}: {r.text}"
            assert r.json()["code"] == "missing_token"
        else:
            self.assert_allowed(route, r)

    @pytest.mark.parametrize("route", ROUTES, ids=lambda r: f"{r.method} {r.path}")
    def test_registered(self, client, user_h, route):
        r = self.request(client, route, user_h)
        if self.RANK[route.min_role] > 1:
            assert r.status_code == 403, f"{route.method} {route.path}: {r.text}"
            assert r.json()["code"] == "forbidden"
        else:
            self.assert_allowed(route, r)

    @pytest.mark.parametrize("route", ROUTES, ids=lambda r: f"{r.method} {r.path}")
    def test_admin(self, client, admin_h, route):
        r = self.request(client, route, admin_h)
        self.assert_allowed(route, r)


class TestClosedSurface:
    PROBES = [
        ("GET", "/"),
        ("GET", "/docs"),
        ("GET", "/redoc"),
        ("GET", "/openapi.json"),
        ("GET", "/admin"),
        ("GET", "/api"),
        ("GET", "/api/unknown"),
        ("GET", "/auth/register"),
        ("PUT", "/map"),
        ("DELETE", "/features/drone"),
        ("POST", "/api/export.csv"),
        ("PATCH", "/api/lab"),
        ("POST", "/tiles/x/0/0/0.png"),
        ("GET", "/ui"),
    ]

    @pytest.mark.parametrize("method,path", PROBES)
    def test_no_2xx_outside_route_table(self, client, admin_h, method, path):
        r = client.request(method, path, headers=admin_h)
        assert not (200 <= r.status_code < 300), f"{method} {path} answered {r.status_code}"
        body = r.json()
        assert set(body) == {"code", "message", "details"}

    def test_route_table_matches_registered_routes(self, services):
        app = create_app(services)
        registered = {
            (m, getattr(r, "path_format", None))
            for r in app.routes
            for m in getattr(r, "methods", ())
            if m != "HEAD"
        }
        declared = {(r.method, r.path) for r in ROUTES}
        assert registered == declared


class TestSampleFlow:
    def test_single_drone_upload_returns_201_and_id(self, client, user_h):
        record = {
            "id": "D-100", "lat": 45.0, "lon": 9.0,
            "acquired_at": "2022-04-05T10:00:00Z", "w400": 0.5, "w500": 0.6,
        }
        r = client.post("/api/drone", json=record, headers=user_h)
        assert r.status_code == 201
        assert r.json() == {"id": "D-100"}
        detail = client.get("/api/drone/D-100", headers=user_h).json()
        assert detail["spectrum"]["wavelengths"] == [400.0, 500.0]
        assert detail["acquired_at"] == "2022-04-05T10:00:00Z"

    def test_duplicate_single_conflicts(self, client, user_h):
        record = {
            "id": "D-100", "lat": 45.0, "lon": 9.0,
            "acquired_at": "2022-04-05T10:00:00Z", "w400": 0.5,
        }
        assert client.post("/api/drone", json=record, headers=user_h).status_code == 201
        r = client.post("/api/drone", json=record, headers=user_h)
        assert r.status_code == 409
        assert r.json()["code"] == "duplicate_id"

    def test_batch_two_good_one_bad(self, client, user_h):
        csv = (
            "id,lat,lon,acquired_at,w400\n"
            "D-1,45.0,9.0,2022-04-05T10:00:00Z,0.5\n"
            "D-2,95.0,9.0,2022-04-05T10:00:00Z,0.5\n"
            "D-3,45.0,9.1,2022-04-05T10:00:00Z,0.6\n"
        )
        r = client.post("/api/drone/batch", content=csv.encode(), headers=user_h)
        assert r.status_code == 200
        report = r.json()
        assert report["accepted"] == 2
        assert report["rejected"] == 1
        assert report["row_errors"][0]["row_number"] == 2
        assert report["row_errors"][0]["code"] == "bad_coordinate"

    def test_batch_malformed_header_is_422(self, client, user_h):
        r = client.post(
            "/api/lab/batch", content=b"id,lon,w400\nA,9.0,0.5\n", headers=user_h
        )
        assert r.status_code == 422
        assert r.json()["code"] == "malformed_header"

    def test_atomic_batch_aborts_on_any_bad_row(self, client, user_h):
        csv = (
            "id,lat,lon,acquired_at,w400\n"
            "D-1,45.0,9.0,2022-04-05T10:00:00Z,0.5\n"
            "D-2,95.0,9.0,2022-04-05T10:00:00Z,0.5\n"
        )
        r = client.post("/api/drone/batch?atomic=1", content=csv.encode(), headers=user_h)
        assert r.status_code == 200
        assert r.json()["accepted"] == 0
        q = client.get("/api/drone", headers=user_h).json()
        assert q["total"] == 0

    def test_put_replaces_and_404s_on_missing(self, client, admin_h, user_h):
        record = {
            "id": "D-9", "lat": 45.0, "lon": 9.0,
            "acquired_at": "2022-04-05T10:00:00Z", "w400": 0.5,
        }
        client.post("/api/drone", json=record, headers=user_h)
        update = dict(record, lat=46.0)
        r = client.put("/api/drone/D-9", json=update, headers=admin_h)
        assert r.status_code == 200
        assert client.get("/api/drone/D-9", headers=user_h).json()["lat"] == 46.0
        r = client.put("/api/drone/D-404", json=dict(record, id="D-404"), headers=admin_h)
        assert r.status_code == 404

    def test_put_body_id_must_match_path(self, client, admin_h, user_h):
        record = {
            "id": "D-9", "lat": 45.0, "lon": 9.0,
            "acquired_at": "2022-04-05T10:00:00Z", "w400": 0.5,
        }
        client.post("/api/drone", json=record, headers=user_h)
        r = client.put("/api/drone/D-9", json=dict(record, id="D-8"), headers=admin_h)
        assert r.status_code == 422

    def test_delete_then_404(self, client, admin_h, user_h):
        record = {"id": "L-1", "lat": 45.0, "lon": 9.0, "w400": 0.5}
        assert client.post("/api/lab", json=record, headers=user_h).status_code == 201
        r = client.delete("/api/lab/L-1", headers=admin_h)
        assert r.status_code == 204
        assert client.get("/api/lab/L-1", headers=user_h).status_code == 404
        assert client.delete("/api/lab/L-1", headers=admin_h).status_code == 404

    def test_single_with_unknown_field_is_422(self, client, user_h):
        record = {"id": "L-1", "lat": 45.0, "lon": 9.0, "w400": 0.5, "Argilla": 100.0}
        r = client.post("/api/lab", json=record, headers=user_h)
        assert r.status_code == 422
        assert r.json()["code"] == "unknown_variable_column"


@pytest.fixture()
def seeded(client, admin_h, user_h):
    make_variable(client, admin_h, "Argilla")
    r = client.post("/api/lab/batch", content=LAB_CSV.encode(), headers=user_h)
    assert r.status_code == 200 and r.json()["rejected"] == 0
    r = client.post("/api/drone/batch", content=DRONE_CSV.encode(), headers=user_h)
    assert r.status_code == 200 and r.json()["rejected"] == 0


class TestQueries:
    def test_variable_range(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"var": "Argilla", "min": 200, "max": 400},
                       headers=user_h)
        assert [s["id"] for s in r.json()["items"]] == ["DL-060101"]
        assert r.json()["total"] == 1

    def test_min_without_var_rejected(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"min": 200}, headers=user_h)
        assert r.status_code == 422

    def test_unknown_variable_404(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"var": "Sabbia"}, headers=user_h)
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_variable"

    def test_site_filter(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"site": "Lodi"}, headers=user_h)
        assert {s["id"] for s in r.json()["items"]} == {"DL-060101", "DL-060102"}

    def test_id_prefix(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"prefix": "DL-06"}, headers=user_h)
        assert r.json()["total"] == 3

    def test_date_window_widens_bare_dates(self, client, user_h, seeded):
        # D-002 sits at 23:00 on the closing day; a bare 'to' date keeps it
        r = client.get("/api/drone", params={"from": "2022-04-05", "to": "2022-05-14"},
                       headers=user_h)
        assert {s["id"] for s in r.json()["items"]} == {"D-001", "D-002"}

    def test_bbox(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"bbox": "9.0,45.0,10.0,46.0"}, headers=user_h)
        assert {s["id"] for s in r.json()["items"]} == {"DL-060101", "DL-060102"}

    def test_sort_by_value_desc(self, client, user_h, seeded):
        r = client.get(
            "/api/lab",
            params={"var": "Argilla", "sort": "value", "desc": 1},
            headers=user_h,
        )
        values = [s["measurements"]["Argilla"] for s in r.json()["items"]]
        assert values == sorted(values, reverse=True)

    def test_sort_value_without_var_rejected(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"sort": "value"}, headers=user_h)
        assert r.status_code == 422

    def test_pagination(self, client, user_h, seeded):
        r = client.get("/api/lab", params={"offset": 1, "limit": 1}, headers=user_h)
        body = r.json()
        assert body["total"] == 3
        assert len(body["items"]) == 1
        assert body["items"][0]["id"] == "DL-060102"

    def test_export_csv_round_trips(self, client, user_h, seeded):
        r = client.get("/api/export.csv", params={"collection": "lab"}, headers=user_h)
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/csv")
        lines = r.text.splitlines()
        assert lines[0] == "id,lat,lon,sites,Argilla,w400,w410"
        assert len(lines) == 4

    def test_export_respects_filters(self, client, user_h, seeded):
        r = client.get(
            "/api/export.csv",
            params={"collection": "drone", "site": "Asti"},
            headers=user_h,
        )
        rows = r.text.splitlines()[1:]
        assert len(rows) == 1 and rows[0].startswith("D-003,")

    def test_features_layer_is_anonymous(self, client, seeded):
        r = client.get("/features/drone")
        assert r.status_code == 200
        fc = r.json()
        assert fc["type"] == "FeatureCollection"
        assert {f["properties"]["id"] for f in fc["features"]} == {"D-001", "D-002", "D-003"}
        coords = fc["features"][0]["geometry"]["coordinates"]
        assert coords[0] == pytest.approx(9.50) and coords[1] == pytest.approx(45.31)

    def test_features_respect_query_filters(self, client, seeded):
        r = client.get("/features/drone", params={"site": "Lodi"})
        assert len(r.json()["features"]) == 2

    def test_unknown_layer_404(self, client, seeded):
        r = client.get("/features/pred:ghost:ghost")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_layer"


class TestRasterFlow:
    def upload(self, client, admin_h, name="field-a"):
        r = client.post(
            f"/admin/rasters?name={name}",
            content=ASCII_GRID.encode(),
            headers={**admin_h, "Content-Type": "application/octet-stream"},
        )
        assert r.status_code == 202, r.text
        return r.json()

    def test_upload_returns_job_url(self, client, admin_h):
        body = self.upload(client, admin_h)
        assert set(body) == {"raster_id", "job_id", "job_url"}
        assert body["job_url"] == f"/api/jobs/{body['job_id']}"
        job = client.get(body["job_url"], headers=admin_h).json()
        assert job["status"] == "done"

    def test_pyramid_ready_and_tile_served(self, client, admin_h, user_h):
        body = self.upload(client, admin_h)
        listed = client.get("/api/rasters", headers=user_h).json()["rasters"]
        assert listed[0]["status"] == "ready" and listed[0]["enabled"] is True
        r = client.get(f"/tiles/{body['raster_id']}/0/0/0.png")
        assert r.status_code == 200
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_tile_by_name_and_out_of_range(self, client, admin_h):
        self.upload(client, admin_h, name="field-b")
        assert client.get("/tiles/field-b/0/0/0.png").status_code == 200
        r = client.get("/tiles/field-b/9/0/0.png")
        assert r.status_code == 404
        assert r.json()["code"] == "tile_out_of_range"

    def test_disabled_raster_hides_tiles(self, client, admin_h):
        body = self.upload(client, admin_h)
        r = client.patch(
            f"/admin/rasters/{body['raster_id']}", json={"enabled": False}, headers=admin_h
        )
        assert r.status_code == 200 and r.json()["enabled"] is False
        r = client.get(f"/tiles/{body['raster_id']}/0/0/0.png")
        assert r.status_code == 404
        assert r.json()["code"] == "disabled"

    def test_map_renders_png(self, client, admin_h):
        self.upload(client, admin_h, name="field-c")
        r = client.get("/map", params={
            "layers": "field-c", "bbox": "9.0,45.0,10.0,45.75",
            "width": 64, "height": 48,
        })
        assert r.status_code == 200
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_map_requires_bbox(self, client, admin_h):
        r = client.get("/map", params={"layers": "x"})
        assert r.status_code == 422

    def test_bad_upload_reports_format_error(self, client, admin_h):
        r = client.post(
            "/admin/rasters?name=broken",
            content=b"not a raster at all",
            headers=admin_h,
        )
        assert r.status_code == 422


class TestPredictFlow:
    def test_mean_model_end_to_end(self, client, admin_h, user_h, seeded):
        manifest = {"name": "baseline", "kind": "mean", "variables": ["Argilla"]}
        r = client.post("/admin/models", content=json.dumps(manifest).encode(),
                        headers=admin_h)
        assert r.status_code == 201
        model_id = r.json()["model_id"]

        listed = client.get("/api/models", headers=user_h).json()["models"]
        assert [m["id"] for m in listed] == [model_id]

        r = client.post(f"/api/models/{model_id}/run", headers=user_h)
        assert r.status_code == 202
        job = client.get(r.json()["job_url"], headers=user_h).json()
        assert job["status"] == "done"
        assert job["result"]["samples_predicted"] == 3

        preds = client.get("/api/predictions", params={"model": model_id},
                           headers=user_h).json()["predictions"]
        assert len(preds) == 3
        expected = (321.0 + 180.0 + 450.0) / 3.0
        assert all(p["value"] == pytest.approx(expected) for p in preds)

        detail = client.get("/api/drone/D-001", headers=user_h).json()
        assert detail["predictions"][0]["model"] == "baseline"

    def test_run_unknown_model_404(self, client, user_h):
        r = client.post("/api/models/ghost/run", headers=user_h)
        assert r.status_code == 404

    def test_run_by_site_and_by_ids(self, client, admin_h, user_h, seeded):
        manifest = {"name": "baseline", "kind": "mean", "variables": ["Argilla"]}
        model_id = client.post(
            "/admin/models", content=json.dumps(manifest).encode(), headers=admin_h
        ).json()["model_id"]

        r = client.post(f"/api/models/{model_id}/run", json={"site": "Asti"}, headers=user_h)
        job = client.get(r.json()["job_url"], headers=user_h).json()
        assert job["result"]["samples_predicted"] == 1

        r = client.post(f"/api/models/{model_id}/run",
                        json={"sample_ids": ["D-001", "D-002"]}, headers=user_h)
        job = client.get(r.json()["job_url"], headers=user_h).json()
        assert job["result"]["samples_predicted"] == 2

    def test_bad_manifest_is_422(self, client, admin_h):
        r = client.post("/admin/models", content=b"{\"kind\": \"magic\"}", headers=admin_h)
        assert r.status_code == 422
        assert r.json()["code"] == "bad_manifest"

    def test_predictions_filter_by_variable_name(self, client, admin_h, user_h, seeded):
        manifest = {"name": "baseline", "kind": "mean", "variables": ["Argilla"]}
        model_id = client.post(
            "/admin/models", content=json.dumps(manifest).encode(), headers=admin_h
        ).json()["model_id"]
        client.post(f"/api/models/{model_id}/run", headers=user_h)
        r = client.get("/api/predictions", params={"var": "Argilla"}, headers=user_h)
        assert len(r.json()["predictions"]) == 3


class TestJobsEndpoint:
    def test_unknown_job_404(self, client, user_h):
        assert client.get("/api/jobs/nope", headers=user_h).status_code == 404

    def test_failed_job_carries_error(self, client, services, admin_h, user_h, seeded):
        # async registry so the failure lands in the job record instead of
        # being re-raised into the test process
        services.jobs.synchronous = False
        from concurrent.futures import ThreadPoolExecutor

        services.jobs._executor = ThreadPoolExecutor(max_workers=1)
        manifest = {
            "name": "baseline", "kind": "knn",
            "hyperparameters": {"k": 99}, "variables": ["Argilla"],
        }
        model_id = client.post(
            "/admin/models", content=json.dumps(manifest).encode(), headers=admin_h
        ).json()["model_id"]
        r = client.post(f"/api/models/{model_id}/run", headers=user_h)
        assert r.status_code == 202
        services.jobs._executor.shutdown(wait=True)
        job = client.get(r.json()["job_url"], headers=user_h).json()
        assert job["status"] in ("done", "failed")


class TestSpecEndpoint:
    def test_spec_lists_every_route(self, client):
        r = client.get("/api/spec")
        assert r.status_code == 200
        body = r.json()
        assert len(body["routes"]) == len(ROUTES)
        assert {(x["method"], x["path"]) for x in body["routes"]} == {
            (x.method, x.path) for x in ROUTES
        }
        assert body["roles"] == ["anonymous", "registered", "admin"]
        assert "var" in body["query_parameters"]


class TestErrorEnvelope:
    def test_every_error_class_keeps_its_status(self, client, admin_h, user_h):
        cases = [
            (client.get("/api/lab"), 401, "missing_token"),
            (client.delete("/api/lab/x", headers=user_h), 403, "forbidden"),
            (client.get("/api/lab/ghost", headers=user_h), 404, "not_found"),
            (client.get("/api/lab", params={"min": "x", "var": "y"}, headers=user_h),
             422, "invalid"),
        ]
        for response, status, _ in cases:
            assert response.status_code == status
            body = response.json()
            assert set(body) == {"code", "message", "details"}

    def test_envelope_codes_are_specific(self, client, user_h):
        r = client.get("/api/lab/ghost", headers=user_h)
        assert r.json()["code"] == "not_found"
        r = client.post("/api/lab", content=b"not json", headers=user_h)
        assert r.status_code == 422
        r = client.get("/api/lab", params={"sort": "sideways"}, headers=user_h)
        assert r.status_code == 422
