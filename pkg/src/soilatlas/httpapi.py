"""The REST surface tying storage, auth, ingestion, rasters and prediction
together.

Every endpoint the server exposes is a row in ROUTES, which doubles as the
access-control table: an app-level guard dependency looks the active route
up there and compares roles before any handler runs. /api/spec serves the
same table, so the documented surface, the enforced surface and the real
surface cannot drift apart.

Anonymous callers get the map surface (features, tiles, rendered maps);
registered users query and add data; only administrators modify or delete
what is already stored.
"""

from __future__ import annotations

import json
import logging
import math
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from fastapi import Depends, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__, errors, features, ingest
from .auth import AuthService, TokenClaims
from .config import Config
from .domain import ROLE_ADMIN, ROLE_REGISTERED, Variable, format_timestamp
from .jobs import JobRegistry
from .predict import PredictService
from .raster.service import RasterService
from .storage import FilterSpec, Page, SortSpec, Store

log = logging.getLogger("soilatlas.http")

ROLE_ANONYMOUS = "anonymous"
_ROLE_RANK = {ROLE_ANONYMOUS: 0, ROLE_REGISTERED: 1, ROLE_ADMIN: 2}

FILTER_PARAMS = {
    "var": "variable id or exact name",
    "min": "lower bound for var (inclusive)",
    "max": "upper bound for var (inclusive)",
    "site": "site name, exact match",
    "from": "first acquisition date or datetime (inclusive)",
    "to": "last acquisition date or datetime (inclusive)",
    "bbox": "min_lon,min_lat,max_lon,max_lat (inclusive)",
    "prefix": "sample id prefix",
    "sort": "id | lat | lon | acquired_at | site | value (value needs var)",
    "desc": "1 to sort descending",
    "offset": "rows to skip",
    "limit": "page size, 1..10000",
}


@dataclass(frozen=True)
class Route:
    method: str
    path: str
    min_role: str
    summary: str


ROUTES: tuple[Route, ...] = (
    Route("POST", "/auth/register", ROLE_ANONYMOUS, "request an account (admin approval pending)"),
    Route("POST", "/auth/login", ROLE_ANONYMOUS, "exchange credentials for a bearer token"),
    Route("GET", "/features/{layer}", ROLE_ANONYMOUS, "GeoJSON features for a map layer"),
    Route("GET", "/tiles/{raster}/{z}/{x}/{y}.png", ROLE_ANONYMOUS, "one raster tile"),
    Route("GET", "/map", ROLE_ANONYMOUS, "rendered map image for a bbox"),
    Route("GET", "/api/spec", ROLE_ANONYMOUS, "this machine-readable description"),
    Route("GET", "/api/lab", ROLE_REGISTERED, "query lab samples (filter/sort/page)"),
    Route("GET", "/api/drone", ROLE_REGISTERED, "query drone samples (filter/sort/page)"),
    Route("GET", "/api/lab/{sample_id}", ROLE_REGISTERED, "one lab sample with measurements"),
    Route("GET", "/api/drone/{sample_id}", ROLE_REGISTERED, "one drone sample with predictions"),
    Route("POST", "/api/lab", ROLE_REGISTERED, "add one lab sample (JSON record)"),
    Route("POST", "/api/drone", ROLE_REGISTERED, "add one drone sample (JSON record)"),
    Route("POST", "/api/lab/batch", ROLE_REGISTERED, "massive lab upload (CSV body)"),
    Route("POST", "/api/drone/batch", ROLE_REGISTERED, "massive drone upload (CSV body)"),
    Route("GET", "/api/export.csv", ROLE_REGISTERED, "download a collection as CSV"),
    Route("GET", "/api/variables", ROLE_REGISTERED, "list soil variables"),
    Route("GET", "/api/rasters", ROLE_REGISTERED, "list raster layers"),
    Route("GET", "/api/models", ROLE_REGISTERED, "list predictors"),
    Route("GET", "/api/predictions", ROLE_REGISTERED, "list stored predictions"),
    Route("POST", "/api/models/{model_id}/run", ROLE_REGISTERED, "estimate variables for drone samples"),
    Route("GET", "/api/jobs/{job_id}", ROLE_REGISTERED, "background job status"),
    Route("PUT", "/api/lab/{sample_id}", ROLE_ADMIN, "replace one lab sample"),
    Route("PUT", "/api/drone/{sample_id}", ROLE_ADMIN, "replace one drone sample"),
    Route("DELETE", "/api/lab/{sample_id}", ROLE_ADMIN, "delete one lab sample"),
    Route("DELETE", "/api/drone/{sample_id}", ROLE_ADMIN, "delete one drone sample"),
    Route("POST", "/admin/approve/{username}", ROLE_ADMIN, "approve a pending account"),
    Route("GET", "/admin/users", ROLE_ADMIN, "list accounts (?pending=1 for the queue)"),
    Route("POST", "/admin/variables", ROLE_ADMIN, "create a soil variable"),
    Route("POST", "/admin/rasters", ROLE_ADMIN, "upload a raster file (?name=...)"),
    Route("PATCH", "/admin/rasters/{raster_id}", ROLE_ADMIN, "enable or disable a raster"),
    Route("POST", "/admin/models", ROLE_ADMIN, "upload a predictor package"),
)

_ROUTE_INDEX = {(r.method, r.path): r for r in ROUTES}

_STATUS_BY_CLASS = (
    (errors.Unauthorized, 401),
    (errors.Forbidden, 403),
    (errors.NotFound, 404),
    (errors.Conflict, 409),
    (errors.InvalidInput, 422),
)


def status_for(exc: errors.PlatformError) -> int:
    for cls, status in _STATUS_BY_CLASS:
        if isinstance(exc, cls):
            return status
    return 400


@dataclass
class Services:
    """Everything the handlers need, wired once at startup."""

    store: Store
    auth: AuthService
    jobs: JobRegistry
    rasters: RasterService
    predictor: PredictService
    config: Config


def build_services(config: Config, synchronous_jobs: bool = False) -> Services:
    """Open storage and wire the service layer from one config."""
    Path(config.data_dir).mkdir(parents=True, exist_ok=True)
    store = Store(config.data_dir)
    auth = AuthService(store, config.auth_secret, config.token_ttl_seconds)
    if config.bootstrap_admin_user and config.bootstrap_admin_password:
        auth.create_admin(config.bootstrap_admin_user, config.bootstrap_admin_password)
    jobs = JobRegistry(synchronous=synchronous_jobs)
    rasters = RasterService(store, jobs)
    rasters.requeue_stuck_builds()
    predictor = PredictService(store, packages_dir=config.packages_dir)
    return Services(
        store=store, auth=auth, jobs=jobs,
        rasters=rasters, predictor=predictor, config=config,
    )


def app_from_config(config: Config, synchronous_jobs: bool = False) -> FastAPI:
    return create_app(build_services(config, synchronous_jobs=synchronous_jobs))


# ------------------------------------------------------------------- parsing


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    if not raw:
        raise errors.InvalidInput("request body must be a JSON object")
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise errors.InvalidInput("request body is not valid JSON") from None
    if not isinstance(data, dict):
        raise errors.InvalidInput("request body must be a JSON object")
    return data


def _resolve_variable(store: Store, ref: str) -> Variable:
    try:
        return store.get_variable(ref)
    except errors.UnknownVariable:
        var = store.get_variable_by_name(ref)
        if var is None:
            raise errors.UnknownVariable(f"no variable with id or name {ref!r}") from None
        return var


def _float_param(params, key: str) -> float | None:
    raw = params.get(key)
    if raw is None or raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise errors.InvalidInput(f"{key} must be a number, got {raw!r}") from None
    if math.isnan(value):
        raise errors.InvalidInput(f"{key} must not be NaN")
    return value


def _int_param(params, key: str, default: int) -> int:
    raw = params.get(key)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise errors.InvalidInput(f"{key} must be an integer, got {raw!r}") from None


def _parse_bbox(raw: str) -> tuple[float, float, float, float]:
    parts = raw.split(",")
    if len(parts) != 4:
        raise errors.InvalidInput(f"bbox needs 4 numbers, got {raw!r}")
    try:
        lon0, lat0, lon1, lat1 = (float(p) for p in parts)
    except ValueError:
        raise errors.InvalidInput(f"bbox must be numeric: {raw!r}") from None
    return lon0, lat0, lon1, lat1


def _widen_date(raw: str, end: bool) -> str:
    # a bare date means the whole day, inclusive on both ends
    raw = raw.strip()
    if "T" not in raw and len(raw) == 10:
        return raw + ("T23:59:59.999999" if end else "T00:00:00")
    return raw


def parse_filter(store: Store, params) -> FilterSpec:
    """Build a FilterSpec from documented query parameters."""
    variable_range = None
    var_ref = params.get("var")
    lo, hi = _float_param(params, "min"), _float_param(params, "max")
    if var_ref:
        variable_range = (
            _resolve_variable(store, var_ref).id,
            lo if lo is not None else float("-inf"),
            hi if hi is not None else float("inf"),
        )
    elif lo is not None or hi is not None:
        raise errors.InvalidInput("min/max require the var parameter")

    date_range = None
    frm, to = params.get("from"), params.get("to")
    if frm or to:
        date_range = (
            _widen_date(frm, end=False) if frm else "0001-01-01T00:00:00",
            _widen_date(to, end=True) if to else "9999-12-31T23:59:59.999999",
        )

    bbox = _parse_bbox(params["bbox"]) if params.get("bbox") else None

    return FilterSpec(
        variable_range=variable_range,
        site_name=params.get("site") or None,
        date_range=date_range,
        bbox=bbox,
        id_prefix=params.get("prefix") or None,
    )


_SORT_FIELDS = {"id", "lat", "lon", "acquired_at", "site", "value"}


def parse_sort(store: Store, params) -> SortSpec:
    field = params.get("sort") or "id"
    if field not in _SORT_FIELDS:
        raise errors.InvalidInput(f"sort must be one of {sorted(_SORT_FIELDS)}, got {field!r}")
    descending = (params.get("desc") or "").lower() in ("1", "true", "yes")
    if field == "value":
        var_ref = params.get("var")
        if not var_ref:
            raise errors.InvalidInput("sort=value requires the var parameter")
        return SortSpec(
            field="variable_value",
            descending=descending,
            variable_id=_resolve_variable(store, var_ref).id,
        )
    return SortSpec(field=field, descending=descending)


def parse_page(params) -> Page:
    return Page(
        offset=_int_param(params, "offset", 0),
        limit=_int_param(params, "limit", 1000),
    )


def _sample_dict(sample, collection, site_names, variable_names) -> dict:
    body = {
        "id": sample.id,
        "collection": collection,
        "lat": sample.point.lat,
        "lon": sample.point.lon,
        "sites": sorted(site_names[s] for s in sample.site_ids),
        "spectrum": {
            "wavelengths": list(sample.spectrum.wavelengths),
            "values": list(sample.spectrum.values),
        },
    }
    if collection == "lab":
        body["measurements"] = {
            variable_names[m.variable_id]: m.value for m in sample.measurements
        }
    else:
        body["acquired_at"] = format_timestamp(sample.acquired_at)
    return body


# ----------------------------------------------------------------- app setup


def create_app(services: Services) -> FastAPI:
    store, auth, jobs = services.store, services.auth, services.jobs
    rasters, predictor, config = services.rasters, services.predictor, services.config

    async def guard(request: Request) -> None:
        """Resolve the caller's role and enforce the ROUTES table."""
        route = request.scope.get("route")
        template = getattr(route, "path_format", None)
        entry = _ROUTE_INDEX.get((request.method, template))
        if entry is None:
            raise errors.NotFound(f"undocumented endpoint {request.method} {template}")
        claims: TokenClaims | None = None
        role = ROLE_ANONYMOUS
        header = request.headers.get("authorization")
        if header:
            scheme, _, token = header.partition(" ")
            if scheme.lower() != "bearer" or not token.strip():
                raise errors.BadSignature("authorization must be 'Bearer <token>'")
            claims = auth.verify(token.strip())
            role = claims.role
        if _ROLE_RANK[role] < _ROLE_RANK[entry.min_role]:
            if role == ROLE_ANONYMOUS:
                raise errors.MissingToken("authentication required")
            raise errors.Forbidden(f"{role} may not {entry.method} {entry.path}")
        request.state.claims = claims
        request.state.role = role

    app = FastAPI(
        docs_url=None, redoc_url=None, openapi_url=None,
        dependencies=[Depends(guard)],
    )
    app.state.services = services

    # ------------------------------------------------------------- plumbing

    @app.exception_handler(errors.PlatformError)
    async def platform_error(request: Request, exc: errors.PlatformError):
        response = JSONResponse(
            status_code=status_for(exc),
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )
        if isinstance(exc, errors.Unauthorized):
            response.headers["WWW-Authenticate"] = "Bearer"
        return response

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "invalid",
                "message": "invalid request",
                "details": {"errors": [str(e.get("msg", e)) for e in exc.errors()]},
            },
        )

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        # unknown paths and wrong methods answer in the same envelope as
        # everything else; nothing outside ROUTES ever returns 2xx
        code = {404: "not_found", 405: "method_not_allowed"}.get(
            exc.status_code, "error"
        )
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": code, "message": str(exc.detail), "details": {}},
            headers=getattr(exc, "headers", None) or {},
        )

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.monotonic()
        response = await call_next(request)
        log.info(
            "%s",
            json.dumps({
                "method": request.method,
                "path": request.url.path,
                "status": response.status_code,
                "ms": round((time.monotonic() - started) * 1000, 2),
            }),
        )
        return response

    def names(kind: str) -> dict[str, str]:
        if kind == "sites":
            return {s.id: s.name for s in store.list_sites()}
        return {v.id: v.name for v in store.list_variables()}

    def job_response(payload: dict, job_id: str) -> JSONResponse:
        payload = dict(payload)
        payload["job_id"] = job_id
        payload["job_url"] = f"/api/jobs/{job_id}"
        return JSONResponse(
            status_code=202, content=payload,
            headers={"Location": f"/api/jobs/{job_id}"},
        )

    def auto_run_after_drone_change() -> None:
        for model_id in config.auto_run_model_ids:
            jobs.submit("predict", predictor.run_batch, model_id)

    # ----------------------------------------------------------------- auth

    @app.post("/auth/register", status_code=201)
    async def register(request: Request):
        body = await _json_body(request)
        username = body.get("username")
        password = body.get("password")
        if not isinstance(username, str) or not isinstance(password, str) or not password:
            raise errors.InvalidInput("username and password must be non-empty strings")
        user = auth.register(username, password)
        return {"username": user.username, "approved": user.approved}

    @app.post("/auth/login")
    async def login(request: Request):
        body = await _json_body(request)
        username, password = body.get("username"), body.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            raise errors.BadCredentials("unknown username or wrong password")
        token = auth.login(username, password)
        claims = auth.verify(token)
        return {"token": token, "username": claims.username, "role": claims.role}

    @app.post("/admin/approve/{username}")
    async def approve(request: Request, username: str):
        user = auth.approve(username, actor_role=request.state.role)
        return {"username": user.username, "approved": user.approved}

    @app.get("/admin/users")
    async def list_users(request: Request):
        pending_only = request.query_params.get("pending") in ("1", "true")
        users = auth.pending_users() if pending_only else store.list_users()
        return {
            "users": [
                {"id": u.id, "username": u.username, "role": u.role, "approved": u.approved}
                for u in users
            ]
        }

    # -------------------------------------------------------------- samples

    def collection_of(request: Request) -> str:
        # the route template is /api/lab... or /api/drone...
        return request.scope["route"].path_format.split("/")[2]

    @app.get("/api/lab")
    @app.get("/api/drone")
    async def query_collection(request: Request):
        collection = collection_of(request)
        params = request.query_params
        flt = parse_filter(store, params)
        sort = parse_sort(store, params)
        page = parse_page(params)
        total, samples = store.query_samples(collection, flt, sort, page)
        site_names, variable_names = names("sites"), names("variables")
        return {
            "total": total,
            "offset": page.offset,
            "limit": page.limit,
            "items": [
                _sample_dict(s, collection, site_names, variable_names) for s in samples
            ],
        }

    @app.get("/api/lab/{sample_id}")
    @app.get("/api/drone/{sample_id}")
    async def sample_detail(request: Request, sample_id: str):
        return features.sample_detail(store, collection_of(request), sample_id)

    @app.post("/api/lab", status_code=201)
    @app.post("/api/drone", status_code=201)
    async def add_sample(request: Request):
        collection = collection_of(request)
        record = await _json_body(request)
        sample_id = ingest.ingest_single(store, collection, record)
        if collection == "drone":
            auto_run_after_drone_change()
        return {"id": sample_id}

    @app.put("/api/lab/{sample_id}")
    @app.put("/api/drone/{sample_id}")
    async def replace_sample(request: Request, sample_id: str):
        collection = collection_of(request)
        record = await _json_body(request)
        body_id = record.get("id")
        if body_id is not None and str(body_id) != sample_id:
            raise errors.InvalidInput(
                f"body id {body_id!r} does not match path id {sample_id!r}"
            )
        stored = ingest.replace_single(store, collection, sample_id, record)
        if collection == "drone":
            auto_run_after_drone_change()
        return {"id": stored}

    @app.delete("/api/lab/{sample_id}", status_code=204)
    @app.delete("/api/drone/{sample_id}", status_code=204)
    async def delete_sample(request: Request, sample_id: str):
        store.delete_sample(collection_of(request), sample_id, actor_role=request.state.role)
        return Response(status_code=204)

    @app.post("/api/lab/batch")
    @app.post("/api/drone/batch")
    async def batch_upload(request: Request):
        collection = collection_of(request)
        atomic = request.query_params.get("atomic") in ("1", "true")
        body = await request.body()
        report = ingest.ingest_batch(store, collection, body, atomic=atomic)
        if collection == "drone" and report.accepted:
            auto_run_after_drone_change()
        return report.to_dict()

    @app.get("/api/export.csv")
    async def export_csv(request: Request):
        params = request.query_params
        collection = params.get("collection", "lab")
        if collection not in ("lab", "drone"):
            raise errors.InvalidInput(f"collection must be lab or drone, got {collection!r}")
        text = features.export_csv(
            store, collection, parse_filter(store, params), parse_sort(store, params)
        )
        return Response(
            content=text,
            media_type="text/csv",
            headers={"Content-Disposition": f'attachment; filename="{collection}.csv"'},
        )

    # ------------------------------------------------------------- catalogs

    @app.get("/api/variables")
    async def list_variables(request: Request):
        return {
            "variables": [
                {"id": v.id, "name": v.name, "unit": v.unit, "description": v.description}
                for v in store.list_variables()
            ]
        }

    @app.post("/admin/variables", status_code=201)
    async def create_variable(request: Request):
        body = await _json_body(request)
        name = body.get("name")
        if not isinstance(name, str) or not name.strip():
            raise errors.BadName("variable name must be a non-empty string")
        var = Variable(
            id=str(body.get("id") or uuid.uuid4().hex),
            name=name,
            unit=str(body.get("unit") or ""),
            description=str(body.get("description") or ""),
        )
        store.put_variable(var)
        return {"id": var.id, "name": var.name, "unit": var.unit, "description": var.description}

    def raster_dict(meta) -> dict:
        return {
            "id": meta.id,
            "name": meta.name,
            "width": meta.width,
            "height": meta.height,
            "bands": meta.bands,
            "status": meta.status,
            "enabled": meta.enabled,
            "bounds": list(meta.bounds),
            "pixel_size": list(meta.pixel_size),
            "vmin": meta.vmin,
            "vmax": meta.vmax,
        }

    @app.get("/api/rasters")
    async def list_rasters(request: Request):
        return {"rasters": [raster_dict(m) for m in store.list_rasters()]}

    @app.post("/admin/rasters")
    async def upload_raster(request: Request):
        name = request.query_params.get("name")
        if not name:
            raise errors.InvalidInput("raster upload needs a ?name= parameter")
        filename = request.query_params.get("filename") or ""
        data = await request.body()
        raster_id, job_id = ingest.ingest_raster(
            rasters, name, data, actor_role=request.state.role, filename=filename
        )
        return job_response({"raster_id": raster_id}, job_id)

    @app.patch("/admin/rasters/{raster_id}")
    async def toggle_raster(request: Request, raster_id: str):
        body = await _json_body(request)
        enabled = body.get("enabled")
        if not isinstance(enabled, bool):
            raise errors.InvalidInput("body must carry a boolean 'enabled'")
        meta = rasters.set_enabled(raster_id, enabled, actor_role=request.state.role)
        return raster_dict(meta)

    # ------------------------------------------------------------ predictors

    @app.get("/api/models")
    async def list_models(request: Request):
        return {
            "models": [
                {
                    "id": meta.id,
                    "name": meta.name,
                    "kind": meta.kind,
                    "hyperparameters": meta.hyperparameters,
                    "trained_variables": sorted(meta.trained_variables),
                }
                for meta, _ in store.list_models()
            ]
        }

    @app.post("/admin/models", status_code=201)
    async def upload_model(request: Request):
        payload = await request.body()
        model_id = ingest.ingest_predictor(
            store, payload, actor_role=request.state.role,
            packages_dir=config.packages_dir,
        )
        return {"model_id": model_id}

    @app.post("/api/models/{model_id}/run")
    async def run_model(request: Request, model_id: str):
        store.get_model(model_id)
        raw = await request.body()
        sample_ids, site_id = None, None
        if raw:
            try:
                body = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise errors.InvalidInput("run body is not valid JSON") from None
            if not isinstance(body, dict):
                raise errors.InvalidInput("run body must be a JSON object")
            if body.get("sample_ids") is not None:
                ids = body["sample_ids"]
                if not isinstance(ids, list):
                    raise errors.InvalidInput("sample_ids must be a list")
                sample_ids = [str(s) for s in ids]
            if body.get("site") is not None:
                ref = str(body["site"])
                try:
                    site_id = store.get_site(ref).id
                except errors.UnknownSite:
                    by_name = store.get_site_by_name(ref)
                    if by_name is None:
                        raise
                    site_id = by_name.id
        job_id = jobs.submit(
            "predict", predictor.run_batch, model_id,
            sample_ids=sample_ids, site_id=site_id,
        )
        return job_response({"model_id": model_id}, job_id)

    @app.get("/api/jobs/{job_id}")
    async def job_status(request: Request, job_id: str):
        return jobs.get(job_id).snapshot()

    @app.get("/api/predictions")
    async def list_predictions(request: Request):
        params = request.query_params
        variable_id = None
        if params.get("var"):
            variable_id = _resolve_variable(store, params["var"]).id
        rows = store.predictions_for(
            drone_sample_id=params.get("sample") or None,
            model_id=params.get("model") or None,
            variable_id=variable_id,
        )
        return {
            "predictions": [
                {
                    "drone_sample_id": p.drone_sample_id,
                    "model_id": p.model_id,
                    "variable_id": p.variable_id,
                    "value": p.value,
                    "created_at": format_timestamp(p.created_at),
                }
                for p in rows
            ]
        }

    # ------------------------------------------------------------ map reads

    @app.get("/features/{layer}")
    async def layer_features(request: Request, layer: str):
        flt = parse_filter(store, request.query_params)
        return features.features_for_layer(store, layer, None, flt)

    @app.get("/tiles/{raster}/{z}/{x}/{y}.png")
    async def tile(request: Request, raster: str, z: int, x: int, y: int):
        try:
            meta = store.get_raster(raster)
        except errors.NotFound:
            meta = store.get_raster_by_name(raster)
            if meta is None:
                raise errors.NotFound(f"no raster with id or name {raster!r}") from None
        png = rasters.tile_png(meta.id, level=z, row=y, col=x)
        return Response(content=png, media_type="image/png")

    @app.get("/map")
    async def render_map(request: Request):
        params = request.query_params
        layers = [n for n in (params.get("layers") or "").split(",") if n]
        if not params.get("bbox"):
            raise errors.InvalidInput("map rendering needs a bbox parameter")
        bbox = _parse_bbox(params["bbox"])
        width = _int_param(params, "width", 512)
        height = _int_param(params, "height", 512)
        png = rasters.render_map(layers, bbox, width, height)
        return Response(content=png, media_type="image/png")

    @app.get("/api/spec")
    async def api_spec(request: Request):
        return {
            "service": "soilatlas",
            "version": __version__,
            "routes": [
                {
                    "method": r.method,
                    "path": r.path,
                    "min_role": r.min_role,
                    "summary": r.summary,
                }
                for r in ROUTES
            ],
            "query_parameters": FILTER_PARAMS,
            "roles": list(_ROLE_RANK),
        }

    return app
