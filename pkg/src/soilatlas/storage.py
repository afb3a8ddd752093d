"""Embedded persistent store for all platform entities.

Backed by a single SQLite file inside the configured data directory. SQLite
gives the transactional guarantees the platform needs (atomic commits, crash
consistency, readers unaffected by in-flight writes via WAL); this module owns
the schema and exposes typed operations, so swapping in a server-backed
database later only means re-implementing this surface.

The file is branded with an application id (magic) and a schema version; a
file that carries someone else's magic is refused rather than migrated.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import errors
from .domain import (
    DroneSample,
    GeoPoint,
    LabSample,
    Measurement,
    Prediction,
    PredictorMeta,
    ROLE_ADMIN,
    Site,
    Spectrum,
    UserAccount,
    Variable,
    format_timestamp,
    parse_timestamp,
)
from .raster.types import RasterDataset

MAGIC = 0x534F494C  # "SOIL"
SCHEMA_VERSION = 1

COLLECTION_LAB = "lab"
COLLECTION_DRONE = "drone"
COLLECTIONS = (COLLECTION_LAB, COLLECTION_DRONE)

SORT_FIELDS = ("id", "lat", "lon", "acquired_at", "site", "variable_value")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS variables (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    unit TEXT NOT NULL DEFAULT '',
    description TEXT NOT NULL DEFAULT ''
);
CREATE UNIQUE INDEX IF NOT EXISTS variables_name ON variables (name COLLATE NOCASE);

CREATE TABLE IF NOT EXISTS sites (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS sites_name ON sites (name COLLATE NOCASE);

CREATE TABLE IF NOT EXISTS lab_samples (
    id TEXT PRIMARY KEY,
    lat REAL NOT NULL,
    lon REAL NOT NULL,
    wavelengths TEXT NOT NULL,
    reflectance TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS lab_samples_pos ON lab_samples (lat, lon);

CREATE TABLE IF NOT EXISTS drone_samples (
    id TEXT PRIMARY KEY,
    lat REAL NOT NULL,
    lon REAL NOT NULL,
    wavelengths TEXT NOT NULL,
    reflectance TEXT NOT NULL,
    acquired_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS drone_samples_pos ON drone_samples (lat, lon);
CREATE INDEX IF NOT EXISTS drone_samples_time ON drone_samples (acquired_at);

CREATE TABLE IF NOT EXISTS lab_measurements (
    sample_id TEXT NOT NULL REFERENCES lab_samples(id) ON DELETE CASCADE,
    variable_id TEXT NOT NULL REFERENCES variables(id) ON DELETE CASCADE,
    value REAL NOT NULL,
    PRIMARY KEY (sample_id, variable_id)
);

CREATE TABLE IF NOT EXISTS lab_sample_sites (
    sample_id TEXT NOT NULL REFERENCES lab_samples(id) ON DELETE CASCADE,
    site_id TEXT NOT NULL REFERENCES sites(id) ON DELETE CASCADE,
    PRIMARY KEY (sample_id, site_id)
);

CREATE TABLE IF NOT EXISTS drone_sample_sites (
    sample_id TEXT NOT NULL REFERENCES drone_samples(id) ON DELETE CASCADE,
    site_id TEXT NOT NULL REFERENCES sites(id) ON DELETE CASCADE,
    PRIMARY KEY (sample_id, site_id)
);

CREATE TABLE IF NOT EXISTS models (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    kind TEXT NOT NULL,
    hyperparameters TEXT NOT NULL DEFAULT '{}',
    trained_variables TEXT NOT NULL DEFAULT '[]',
    state TEXT
);

CREATE TABLE IF NOT EXISTS predictions (
    drone_sample_id TEXT NOT NULL REFERENCES drone_samples(id) ON DELETE CASCADE,
    model_id TEXT NOT NULL REFERENCES models(id) ON DELETE CASCADE,
    variable_id TEXT NOT NULL REFERENCES variables(id) ON DELETE CASCADE,
    value REAL NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (drone_sample_id, model_id, variable_id)
);

CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    username TEXT NOT NULL COLLATE NOCASE,
    password_digest BLOB NOT NULL,
    role TEXT NOT NULL,
    approved INTEGER NOT NULL DEFAULT 0
);
CREATE UNIQUE INDEX IF NOT EXISTS users_name ON users (username);

CREATE TABLE IF NOT EXISTS rasters (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    width INTEGER NOT NULL,
    height INTEGER NOT NULL,
    bands INTEGER NOT NULL,
    origin_lon REAL NOT NULL,
    origin_lat REAL NOT NULL,
    dx REAL NOT NULL,
    dy REAL NOT NULL,
    nodata REAL,
    enabled INTEGER NOT NULL DEFAULT 1,
    status TEXT NOT NULL DEFAULT 'building',
    vmin REAL,
    vmax REAL
);
CREATE UNIQUE INDEX IF NOT EXISTS rasters_name ON rasters (name COLLATE NOCASE);

CREATE TABLE IF NOT EXISTS raster_levels (
    raster_id TEXT NOT NULL REFERENCES rasters(id) ON DELETE CASCADE,
    level INTEGER NOT NULL,
    width INTEGER NOT NULL,
    height INTEGER NOT NULL,
    pixels BLOB NOT NULL,
    PRIMARY KEY (raster_id, level)
);

CREATE TABLE IF NOT EXISTS attachments (
    id TEXT PRIMARY KEY,
    site_id TEXT REFERENCES sites(id) ON DELETE CASCADE,
    name TEXT NOT NULL,
    data BLOB NOT NULL
);
"""


@dataclass(frozen=True)
class FilterSpec:
    """Conjunction of optional predicates over a sample collection.

    All bounds are inclusive. A predicate a sample cannot carry (a date range
    on lab samples, a variable a sample was never measured or predicted for)
    simply does not match that sample.
    """

    variable_range: tuple[str, float, float] | None = None  # (variable_id, min, max)
    site_name: str | None = None
    date_range: tuple[datetime, datetime] | None = None
    bbox: tuple[float, float, float, float] | None = None  # min_lon, min_lat, max_lon, max_lat
    id_prefix: str | None = None

    def __post_init__(self):
        if self.variable_range is not None:
            var, lo, hi = self.variable_range
            if lo > hi:
                raise errors.InvalidInput(f"variable range min {lo} > max {hi}")
            object.__setattr__(self, "variable_range", (var, float(lo), float(hi)))
        if self.date_range is not None:
            lo, hi = (parse_timestamp(t) for t in self.date_range)
            if lo > hi:
                raise errors.InvalidInput("date range from > to")
            object.__setattr__(self, "date_range", (lo, hi))
        if self.bbox is not None:
            min_lon, min_lat, max_lon, max_lat = (float(v) for v in self.bbox)
            if min_lon > max_lon or min_lat > max_lat:
                raise errors.InvalidInput(f"bbox min > max: {self.bbox}")
            object.__setattr__(self, "bbox", (min_lon, min_lat, max_lon, max_lat))

    @property
    def empty(self) -> bool:
        return all(
            v is None
            for v in (self.variable_range, self.site_name, self.date_range, self.bbox, self.id_prefix)
        )


@dataclass(frozen=True)
class SortSpec:
    field: str = "id"
    descending: bool = False
    variable_id: str | None = None

    def __post_init__(self):
        if self.field not in SORT_FIELDS:
            raise errors.InvalidInput(f"unknown sort field {self.field!r}")
        if self.field == "variable_value" and not self.variable_id:
            raise errors.InvalidInput("variable_value sort requires a variable_id")


@dataclass(frozen=True)
class Page:
    offset: int = 0
    limit: int = 1000

    def __post_init__(self):
        if self.offset < 0:
            raise errors.InvalidInput(f"offset must be >= 0, got {self.offset}")
        if not 1 <= self.limit <= 10000:
            raise errors.InvalidInput(f"limit must be in [1, 10000], got {self.limit}")


@dataclass
class _SampleRow:
    """Light projection used while filtering and sorting."""

    id: str
    lat: float
    lon: float
    acquired_at: datetime | None = None
    site_names: tuple[str, ...] = ()
    filter_value: float | None = None
    sort_value: float | None = None


def _pack_pixels(arr: np.ndarray) -> bytes:
    return zlib.compress(np.ascontiguousarray(arr, dtype="<f8").tobytes(), 6)


def _unpack_pixels(blob: bytes, bands: int, height: int, width: int) -> np.ndarray:
    flat = np.frombuffer(zlib.decompress(blob), dtype="<f8")
    return flat.reshape(bands, height, width).copy()


class Store:
    """CRUD store with attribute, spatial and temporal queries.

    Thread-safe: every thread gets its own SQLite connection; writes are
    serialized behind a process-wide lock and committed atomically, reads see
    committed snapshots only.
    """

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.data_dir / "soilatlas.db"
        self._local = threading.local()
        self._write_lock = threading.RLock()
        self._all_conns: list[sqlite3.Connection] = []
        self._conns_lock = threading.Lock()
        self._closed = False
        self._init_schema()

    # ------------------------------------------------------------- connection

    def _conn(self) -> sqlite3.Connection:
        if self._closed:
            raise RuntimeError("store is closed")
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.path, timeout=30.0, isolation_level=None)
            conn.row_factory = sqlite3.Row
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=FULL")
            conn.execute("PRAGMA foreign_keys=ON")
            self._local.conn = conn
            with self._conns_lock:
                self._all_conns.append(conn)
        return conn

    def close(self) -> None:
        self._closed = True
        with self._conns_lock:
            for conn in self._all_conns:
                try:
                    conn.close()
                except sqlite3.Error:
                    pass
            self._all_conns.clear()
        self._local = threading.local()

    @contextmanager
    def _write(self):
        conn = self._conn()
        with self._write_lock:
            if conn.in_transaction:
                # nested inside an outer write on this thread; outer txn commits
                yield conn
                return
            conn.execute("BEGIN IMMEDIATE")
            try:
                yield conn
            except BaseException:
                conn.execute("ROLLBACK")
                raise
            conn.execute("COMMIT")

    @contextmanager
    def _read(self):
        """Snapshot read: statements inside see one consistent database state."""
        conn = self._conn()
        if conn.in_transaction:
            yield conn
            return
        conn.execute("BEGIN")
        try:
            yield conn
        finally:
            conn.execute("COMMIT")

    def _init_schema(self) -> None:
        try:
            conn = self._conn()
            app_id = conn.execute("PRAGMA application_id").fetchone()[0]
            version = conn.execute("PRAGMA user_version").fetchone()[0]
        except sqlite3.DatabaseError as exc:
            raise errors.InvalidInput(f"{self.path} is not a soilatlas data file: {exc}") from exc
        if app_id == 0 and version == 0:
            with self._write_lock:
                conn.execute(f"PRAGMA application_id = {MAGIC}")
                conn.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")
                conn.executescript(_SCHEMA)
        elif app_id != MAGIC:
            raise errors.InvalidInput(f"{self.path} carries foreign magic 0x{app_id:08X}")
        elif version != SCHEMA_VERSION:
            raise errors.InvalidInput(f"unsupported schema version {version}")

    # ------------------------------------------------------------------ users

    def put_user(self, user: UserAccount) -> str:
        with self._write() as conn:
            row = conn.execute(
                "SELECT id FROM users WHERE username = ?", (user.username,)
            ).fetchone()
            if row and row["id"] != user.id:
                raise errors.UsernameTaken(f"username {user.username!r} already registered")
            conn.execute(
                "INSERT INTO users (id, username, password_digest, role, approved)"
                " VALUES (?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET username = excluded.username,"
                "  password_digest = excluded.password_digest, role = excluded.role,"
                "  approved = excluded.approved",
                (user.id, user.username, user.password_digest, user.role, int(user.approved)),
            )
        return user.id

    def get_user(self, user_id: str) -> UserAccount:
        row = self._conn().execute("SELECT * FROM users WHERE id = ?", (user_id,)).fetchone()
        if row is None:
            raise errors.NotFound(f"user {user_id!r} not found")
        return self._user_from_row(row)

    def get_user_by_username(self, username: str) -> UserAccount | None:
        row = self._conn().execute(
            "SELECT * FROM users WHERE username = ?", (username,)
        ).fetchone()
        return self._user_from_row(row) if row else None

    def list_users(self, approved: bool | None = None) -> list[UserAccount]:
        sql = "SELECT * FROM users"
        args: tuple = ()
        if approved is not None:
            sql += " WHERE approved = ?"
            args = (int(approved),)
        rows = self._conn().execute(sql + " ORDER BY username", args).fetchall()
        return [self._user_from_row(r) for r in rows]

    @staticmethod
    def _user_from_row(row) -> UserAccount:
        return UserAccount(
            id=row["id"],
            username=row["username"],
            password_digest=row["password_digest"],
            role=row["role"],
            approved=bool(row["approved"]),
        )

    # -------------------------------------------------------- variables/sites

    def put_variable(self, var: Variable) -> str:
        with self._write() as conn:
            row = conn.execute(
                "SELECT id FROM variables WHERE name = ? COLLATE NOCASE", (var.name,)
            ).fetchone()
            if row and row["id"] != var.id:
                raise errors.Conflict(f"variable name {var.name!r} already used by {row['id']!r}")
            # plain upsert: OR REPLACE would delete the old row first, and the
            # delete cascades into measurements and predictions
            conn.execute(
                "INSERT INTO variables (id, name, unit, description) VALUES (?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET name = excluded.name,"
                "  unit = excluded.unit, description = excluded.description",
                (var.id, var.name, var.unit, var.description),
            )
        return var.id

    def get_variable(self, variable_id: str) -> Variable:
        row = self._conn().execute(
            "SELECT * FROM variables WHERE id = ?", (variable_id,)
        ).fetchone()
        if row is None:
            raise errors.UnknownVariable(f"variable {variable_id!r} not found")
        return Variable(id=row["id"], name=row["name"], unit=row["unit"], description=row["description"])

    def get_variable_by_name(self, name: str) -> Variable | None:
        row = self._conn().execute(
            "SELECT * FROM variables WHERE name = ? COLLATE NOCASE", (name,)
        ).fetchone()
        if row is None:
            return None
        return Variable(id=row["id"], name=row["name"], unit=row["unit"], description=row["description"])

    def list_variables(self) -> list[Variable]:
        rows = self._conn().execute("SELECT * FROM variables ORDER BY name").fetchall()
        return [Variable(id=r["id"], name=r["name"], unit=r["unit"], description=r["description"]) for r in rows]

    def put_site(self, site: Site) -> str:
        with self._write() as conn:
            row = conn.execute(
                "SELECT id FROM sites WHERE name = ? COLLATE NOCASE", (site.name,)
            ).fetchone()
            if row and row["id"] != site.id:
                raise errors.Conflict(f"site name {site.name!r} already used by {row['id']!r}")
            conn.execute(
                "INSERT INTO sites (id, name) VALUES (?, ?)"
                " ON CONFLICT(id) DO UPDATE SET name = excluded.name",
                (site.id, site.name),
            )
        return site.id

    def get_site(self, site_id: str) -> Site:
        row = self._conn().execute("SELECT * FROM sites WHERE id = ?", (site_id,)).fetchone()
        if row is None:
            raise errors.UnknownSite(f"site {site_id!r} not found")
        return Site(id=row["id"], name=row["name"])

    def get_site_by_name(self, name: str) -> Site | None:
        row = self._conn().execute(
            "SELECT * FROM sites WHERE name = ? COLLATE NOCASE", (name,)
        ).fetchone()
        return Site(id=row["id"], name=row["name"]) if row else None

    def list_sites(self) -> list[Site]:
        rows = self._conn().execute("SELECT * FROM sites ORDER BY name").fetchall()
        return [Site(id=r["id"], name=r["name"]) for r in rows]

    # ---------------------------------------------------------------- samples

    @staticmethod
    def _tables(collection: str) -> tuple[str, str]:
        if collection == COLLECTION_LAB:
            return "lab_samples", "lab_sample_sites"
        if collection == COLLECTION_DRONE:
            return "drone_samples", "drone_sample_sites"
        raise errors.InvalidInput(f"unknown collection {collection!r}")

    def put_sample(self, collection: str, sample: LabSample | DroneSample) -> str:
        self._tables(collection)  # validates the collection name
        if collection == COLLECTION_LAB and not isinstance(sample, LabSample):
            raise errors.InvalidInput("lab collection stores LabSample values")
        if collection == COLLECTION_DRONE and not isinstance(sample, DroneSample):
            raise errors.InvalidInput("drone collection stores DroneSample values")
        with self._write():
            self._put_sample_in_tx(collection, sample)
        return sample.id

    def put_samples(self, collection: str, samples: list[LabSample | DroneSample]) -> int:
        """Persist a batch inside one transaction (all or nothing)."""
        with self._write():
            for sample in samples:
                self._put_sample_in_tx(collection, sample)
        return len(samples)

    def _put_sample_in_tx(self, collection: str, sample) -> None:
        # relies on an open transaction owned by the caller
        conn = self._conn()
        assert conn.in_transaction
        table, link = self._tables(collection)
        is_lab = collection == COLLECTION_LAB
        for site_id in sample.site_ids:
            if conn.execute("SELECT 1 FROM sites WHERE id = ?", (site_id,)).fetchone() is None:
                raise errors.DanglingReference("site", site_id)
        wl = json.dumps(list(sample.spectrum.wavelengths))
        vals = json.dumps(list(sample.spectrum.values))
        if is_lab:
            for m in sample.measurements:
                if conn.execute("SELECT 1 FROM variables WHERE id = ?", (m.variable_id,)).fetchone() is None:
                    raise errors.DanglingReference("variable", m.variable_id)
            conn.execute(
                f"INSERT INTO {table} (id, lat, lon, wavelengths, reflectance) VALUES (?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET lat = excluded.lat, lon = excluded.lon,"
                "  wavelengths = excluded.wavelengths, reflectance = excluded.reflectance",
                (sample.id, sample.point.lat, sample.point.lon, wl, vals),
            )
            conn.execute("DELETE FROM lab_measurements WHERE sample_id = ?", (sample.id,))
            conn.executemany(
                "INSERT INTO lab_measurements (sample_id, variable_id, value) VALUES (?, ?, ?)",
                [(sample.id, m.variable_id, m.value) for m in sample.measurements],
            )
        else:
            conn.execute(
                f"INSERT INTO {table} (id, lat, lon, wavelengths, reflectance, acquired_at)"
                " VALUES (?, ?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET lat = excluded.lat, lon = excluded.lon,"
                "  wavelengths = excluded.wavelengths, reflectance = excluded.reflectance,"
                "  acquired_at = excluded.acquired_at",
                (sample.id, sample.point.lat, sample.point.lon, wl, vals, format_timestamp(sample.acquired_at)),
            )
        conn.execute(f"DELETE FROM {link} WHERE sample_id = ?", (sample.id,))
        conn.executemany(
            f"INSERT INTO {link} (sample_id, site_id) VALUES (?, ?)",
            [(sample.id, sid) for sid in sorted(sample.site_ids)],
        )

    def has_sample(self, collection: str, sample_id: str) -> bool:
        table, _ = self._tables(collection)
        return (
            self._conn().execute(f"SELECT 1 FROM {table} WHERE id = ?", (sample_id,)).fetchone()
            is not None
        )

    def get_sample(self, collection: str, sample_id: str) -> LabSample | DroneSample:
        table, _ = self._tables(collection)
        with self._read() as conn:
            row = conn.execute(f"SELECT * FROM {table} WHERE id = ?", (sample_id,)).fetchone()
            if row is None:
                raise errors.NotFound(f"{collection} sample {sample_id!r} not found")
            return self._sample_from_row(collection, row, conn)

    def _sample_from_row(self, collection: str, row, conn) -> LabSample | DroneSample:
        _, link = self._tables(collection)
        spectrum = Spectrum(
            wavelengths=tuple(json.loads(row["wavelengths"])),
            values=tuple(json.loads(row["reflectance"])),
        )
        point = GeoPoint(lat=row["lat"], lon=row["lon"])
        site_ids = frozenset(
            r["site_id"]
            for r in conn.execute(f"SELECT site_id FROM {link} WHERE sample_id = ?", (row["id"],))
        )
        if collection == COLLECTION_LAB:
            measurements = tuple(
                Measurement(variable_id=r["variable_id"], value=r["value"])
                for r in conn.execute(
                    "SELECT variable_id, value FROM lab_measurements WHERE sample_id = ?",
                    (row["id"],),
                )
            )
            return LabSample(
                id=row["id"], point=point, spectrum=spectrum,
                measurements=measurements, site_ids=site_ids,
            )
        return DroneSample(
            id=row["id"], point=point, spectrum=spectrum,
            acquired_at=parse_timestamp(row["acquired_at"]), site_ids=site_ids,
        )

    def delete_sample(self, collection: str, sample_id: str, actor_role: str) -> None:
        self._require_admin(actor_role)
        table, _ = self._tables(collection)
        with self._write() as conn:
            cur = conn.execute(f"DELETE FROM {table} WHERE id = ?", (sample_id,))
            if cur.rowcount == 0:
                raise errors.NotFound(f"{collection} sample {sample_id!r} not found")

    def count_samples(self, collection: str) -> int:
        table, _ = self._tables(collection)
        return self._conn().execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]

    def all_samples(self, collection: str) -> list[LabSample | DroneSample]:
        """Every sample in id order, without paging."""
        table, _ = self._tables(collection)
        with self._read() as conn:
            rows = conn.execute(f"SELECT * FROM {table} ORDER BY id").fetchall()
            return [self._sample_from_row(collection, row, conn) for row in rows]

    def sample_ids(self, collection: str) -> list[str]:
        table, _ = self._tables(collection)
        return [r["id"] for r in self._conn().execute(f"SELECT id FROM {table} ORDER BY id")]

    @staticmethod
    def _require_admin(actor_role: str) -> None:
        if actor_role != ROLE_ADMIN:
            raise errors.Forbidden("only administrators may delete data")

    # ------------------------------------------------------------ generic del

    def delete_variable(self, variable_id: str, actor_role: str) -> None:
        self._require_admin(actor_role)
        with self._write() as conn:
            cur = conn.execute("DELETE FROM variables WHERE id = ?", (variable_id,))
            if cur.rowcount == 0:
                raise errors.NotFound(f"variable {variable_id!r} not found")

    def delete_site(self, site_id: str, actor_role: str) -> None:
        self._require_admin(actor_role)
        with self._write() as conn:
            cur = conn.execute("DELETE FROM sites WHERE id = ?", (site_id,))
            if cur.rowcount == 0:
                raise errors.NotFound(f"site {site_id!r} not found")

    def delete_model(self, model_id: str, actor_role: str) -> None:
        self._require_admin(actor_role)
        with self._write() as conn:
            cur = conn.execute("DELETE FROM models WHERE id = ?", (model_id,))
            if cur.rowcount == 0:
                raise errors.UnknownModel(f"model {model_id!r} not found")

    def delete_raster(self, raster_id: str, actor_role: str) -> None:
        self._require_admin(actor_role)
        with self._write() as conn:
            cur = conn.execute("DELETE FROM rasters WHERE id = ?", (raster_id,))
            if cur.rowcount == 0:
                raise errors.NotFound(f"raster {raster_id!r} not found")

    # ---------------------------------------------------------------- queries

    def _resolve_filter(self, flt: FilterSpec, sort: SortSpec, conn) -> None:
        """Reject filters or sorts that reference entities that do not exist."""
        var_ids = []
        if flt.variable_range is not None:
            var_ids.append(flt.variable_range[0])
        if sort.field == "variable_value":
            var_ids.append(sort.variable_id)
        for var_id in var_ids:
            if conn.execute("SELECT 1 FROM variables WHERE id = ?", (var_id,)).fetchone() is None:
                raise errors.UnknownVariable(f"variable {var_id!r} not found")
        if flt.site_name is not None:
            row = conn.execute(
                "SELECT id FROM sites WHERE name = ? COLLATE NOCASE", (flt.site_name,)
            ).fetchone()
            if row is None:
                raise errors.UnknownSite(f"site named {flt.site_name!r} not found")

    def _load_rows(self, collection: str, conn, flt: FilterSpec, sort: SortSpec) -> list[_SampleRow]:
        table, link = self._tables(collection)
        cols = "id, lat, lon" + (", acquired_at" if collection == COLLECTION_DRONE else "")
        rows = {
            r["id"]: _SampleRow(
                id=r["id"],
                lat=r["lat"],
                lon=r["lon"],
                acquired_at=parse_timestamp(r["acquired_at"]) if collection == COLLECTION_DRONE else None,
            )
            for r in conn.execute(f"SELECT {cols} FROM {table}")
        }
        need_sites = flt.site_name is not None or sort.field == "site"
        if need_sites:
            for r in conn.execute(
                f"SELECT m.sample_id AS sid, s.name AS name FROM {link} m JOIN sites s ON s.id = m.site_id"
            ):
                row = rows.get(r["sid"])
                if row is not None:
                    row.site_names = row.site_names + (r["name"],)
        def load_values(var_id: str, slot: str) -> None:
            if collection == COLLECTION_LAB:
                cursor = conn.execute(
                    "SELECT sample_id AS sid, value FROM lab_measurements WHERE variable_id = ?",
                    (var_id,),
                )
            else:
                # a drone sample's value for a variable is its most recent estimate
                cursor = conn.execute(
                    "SELECT drone_sample_id AS sid, value FROM predictions WHERE variable_id = ?"
                    " ORDER BY created_at, model_id",
                    (var_id,),
                )
            for r in cursor:
                row = rows.get(r["sid"])
                if row is not None:
                    setattr(row, slot, r["value"])

        if flt.variable_range is not None:
            load_values(flt.variable_range[0], "filter_value")
        if sort.field == "variable_value":
            load_values(sort.variable_id, "sort_value")
        return list(rows.values())

    @staticmethod
    def _matches(row: _SampleRow, flt: FilterSpec, site_name: str | None) -> bool:
        if flt.bbox is not None:
            min_lon, min_lat, max_lon, max_lat = flt.bbox
            if not (min_lon <= row.lon <= max_lon and min_lat <= row.lat <= max_lat):
                return False
        if flt.id_prefix is not None and not row.id.startswith(flt.id_prefix):
            return False
        if site_name is not None:
            target = site_name.casefold()
            if not any(n.casefold() == target for n in row.site_names):
                return False
        if flt.date_range is not None:
            if row.acquired_at is None:
                return False
            lo, hi = flt.date_range
            if not lo <= row.acquired_at <= hi:
                return False
        if flt.variable_range is not None:
            _, lo, hi = flt.variable_range
            if row.filter_value is None or not lo <= row.filter_value <= hi:
                return False
        return True

    @staticmethod
    def _sort_rows(rows: list[_SampleRow], sort: SortSpec) -> list[_SampleRow]:
        def key_of(row: _SampleRow):
            if sort.field == "id":
                return row.id
            if sort.field == "lat":
                return row.lat
            if sort.field == "lon":
                return row.lon
            if sort.field == "acquired_at":
                return row.acquired_at
            if sort.field == "site":
                return min(row.site_names) if row.site_names else None
            return row.sort_value  # variable_value

        present = [r for r in rows if key_of(r) is not None]
        missing = [r for r in rows if key_of(r) is None]
        # id ascending is the tiebreak in both directions; stable sort keeps it
        present.sort(key=lambda r: r.id)
        present.sort(key=key_of, reverse=sort.descending)
        missing.sort(key=lambda r: r.id)
        return present + missing

    def query_samples(
        self,
        collection: str,
        flt: FilterSpec | None = None,
        sort: SortSpec | None = None,
        page: Page | None = None,
    ) -> tuple[int, list[LabSample | DroneSample]]:
        """Filter, sort and slice one collection.

        Equivalent to a brute-force scan: keep the samples satisfying every
        present predicate, order by the sort key (samples lacking the key come
        last, id ascending breaks ties), then apply the page. The returned
        count is the pre-slice cardinality.
        """
        flt = flt or FilterSpec()
        sort = sort or SortSpec()
        page = page or Page()
        table, _ = self._tables(collection)
        with self._read() as conn:
            self._resolve_filter(flt, sort, conn)
            rows = self._load_rows(collection, conn, flt, sort)
            kept = [r for r in rows if self._matches(r, flt, flt.site_name)]
            ordered = self._sort_rows(kept, sort)
            total = len(ordered)
            window = ordered[page.offset : page.offset + page.limit]
            full = [
                self._sample_from_row(
                    collection,
                    conn.execute(f"SELECT * FROM {table} WHERE id = ?", (r.id,)).fetchone(),
                    conn,
                )
                for r in window
            ]
        return total, full

    def query_bbox_points(
        self, collection: str, bbox: tuple[float, float, float, float]
    ) -> list[tuple[str, GeoPoint]]:
        """All sample positions inside a closed bounding box."""
        min_lon, min_lat, max_lon, max_lat = (float(v) for v in bbox)
        if min_lon > max_lon or min_lat > max_lat:
            raise errors.InvalidInput(f"bbox min > max: {bbox}")
        table, _ = self._tables(collection)
        rows = self._conn().execute(
            f"SELECT id, lat, lon FROM {table}"
            " WHERE lat BETWEEN ? AND ? AND lon BETWEEN ? AND ? ORDER BY id",
            (min_lat, max_lat, min_lon, max_lon),
        ).fetchall()
        return [(r["id"], GeoPoint(lat=r["lat"], lon=r["lon"])) for r in rows]

    # ------------------------------------------------------------ predictions

    def upsert_prediction(self, prediction: Prediction) -> None:
        with self._write() as conn:
            self._upsert_prediction_in_tx(conn, prediction)

    def _upsert_prediction_in_tx(self, conn, prediction: Prediction) -> None:
        if conn.execute(
            "SELECT 1 FROM drone_samples WHERE id = ?", (prediction.drone_sample_id,)
        ).fetchone() is None:
            raise errors.DanglingReference("drone_sample", prediction.drone_sample_id)
        if conn.execute("SELECT 1 FROM models WHERE id = ?", (prediction.model_id,)).fetchone() is None:
            raise errors.DanglingReference("model", prediction.model_id)
        if conn.execute(
            "SELECT 1 FROM variables WHERE id = ?", (prediction.variable_id,)
        ).fetchone() is None:
            raise errors.DanglingReference("variable", prediction.variable_id)
        # re-estimating the same value is a no-op, keeping reruns change-free
        current = conn.execute(
            "SELECT value FROM predictions WHERE drone_sample_id = ? AND model_id = ? AND variable_id = ?",
            prediction.key,
        ).fetchone()
        if current is not None and current["value"] == prediction.value:
            return
        conn.execute(
            "INSERT OR REPLACE INTO predictions"
            " (drone_sample_id, model_id, variable_id, value, created_at) VALUES (?, ?, ?, ?, ?)",
            (
                prediction.drone_sample_id,
                prediction.model_id,
                prediction.variable_id,
                prediction.value,
                format_timestamp(prediction.created_at),
            ),
        )

    def upsert_predictions(self, predictions: list[Prediction]) -> None:
        with self._write() as conn:
            for p in predictions:
                self._upsert_prediction_in_tx(conn, p)

    def predictions_for(
        self,
        drone_sample_id: str | None = None,
        model_id: str | None = None,
        variable_id: str | None = None,
    ) -> list[Prediction]:
        clauses, args = [], []
        for col, val in (
            ("drone_sample_id", drone_sample_id),
            ("model_id", model_id),
            ("variable_id", variable_id),
        ):
            if val is not None:
                clauses.append(f"{col} = ?")
                args.append(val)
        sql = "SELECT * FROM predictions"
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY drone_sample_id, model_id, variable_id"
        rows = self._conn().execute(sql, args).fetchall()
        return [
            Prediction(
                drone_sample_id=r["drone_sample_id"],
                model_id=r["model_id"],
                variable_id=r["variable_id"],
                value=r["value"],
                created_at=parse_timestamp(r["created_at"]),
            )
            for r in rows
        ]

    def count_predictions(self) -> int:
        return self._conn().execute("SELECT COUNT(*) FROM predictions").fetchone()[0]

    # ----------------------------------------------------------------- models

    def put_model(self, meta: PredictorMeta, state: dict | None = None) -> str:
        with self._write() as conn:
            existing = conn.execute("SELECT state FROM models WHERE id = ?", (meta.id,)).fetchone()
            keep_state = state if state is not None else (json.loads(existing["state"]) if existing and existing["state"] else None)
            # re-saving a model must not disturb its predictions, so avoid the
            # delete half of OR REPLACE
            conn.execute(
                "INSERT INTO models (id, name, kind, hyperparameters, trained_variables, state)"
                " VALUES (?, ?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET name = excluded.name, kind = excluded.kind,"
                "  hyperparameters = excluded.hyperparameters,"
                "  trained_variables = excluded.trained_variables, state = excluded.state",
                (
                    meta.id,
                    meta.name,
                    meta.kind,
                    json.dumps(meta.hyperparameters, sort_keys=True),
                    json.dumps(sorted(meta.trained_variables)),
                    json.dumps(keep_state) if keep_state is not None else None,
                ),
            )
        return meta.id

    def get_model(self, model_id: str) -> tuple[PredictorMeta, dict | None]:
        row = self._conn().execute("SELECT * FROM models WHERE id = ?", (model_id,)).fetchone()
        if row is None:
            raise errors.UnknownModel(f"model {model_id!r} not found")
        return self._model_from_row(row)

    def list_models(self) -> list[tuple[PredictorMeta, dict | None]]:
        rows = self._conn().execute("SELECT * FROM models ORDER BY id").fetchall()
        return [self._model_from_row(r) for r in rows]

    @staticmethod
    def _model_from_row(row) -> tuple[PredictorMeta, dict | None]:
        meta = PredictorMeta(
            id=row["id"],
            name=row["name"],
            kind=row["kind"],
            hyperparameters=json.loads(row["hyperparameters"]),
            trained_variables=frozenset(json.loads(row["trained_variables"])),
        )
        state = json.loads(row["state"]) if row["state"] else None
        return meta, state

    # ---------------------------------------------------------------- rasters

    def put_raster(self, meta: RasterDataset, pixels: np.ndarray) -> str:
        """Store raster metadata plus its full-resolution pixels (level 0).

        The raster starts in 'building' status; tiles become visible only when
        commit_pyramid lands.
        """
        finite = pixels[np.isfinite(pixels)]
        vmin = float(finite.min()) if finite.size else None
        vmax = float(finite.max()) if finite.size else None
        with self._write() as conn:
            row = conn.execute(
                "SELECT id FROM rasters WHERE name = ? COLLATE NOCASE", (meta.name,)
            ).fetchone()
            if row and row["id"] != meta.id:
                raise errors.Conflict(f"raster name {meta.name!r} already used by {row['id']!r}")
            conn.execute(
                "INSERT INTO rasters"
                " (id, name, width, height, bands, origin_lon, origin_lat, dx, dy, nodata,"
                "  enabled, status, vmin, vmax)"
                " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, 'building', ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET name = excluded.name,"
                "  width = excluded.width, height = excluded.height, bands = excluded.bands,"
                "  origin_lon = excluded.origin_lon, origin_lat = excluded.origin_lat,"
                "  dx = excluded.dx, dy = excluded.dy, nodata = excluded.nodata,"
                "  enabled = excluded.enabled, status = 'building',"
                "  vmin = excluded.vmin, vmax = excluded.vmax",
                (
                    meta.id, meta.name, meta.width, meta.height, meta.bands,
                    meta.origin[0], meta.origin[1], meta.pixel_size[0], meta.pixel_size[1],
                    meta.nodata, int(meta.enabled), vmin, vmax,
                ),
            )
            conn.execute("DELETE FROM raster_levels WHERE raster_id = ?", (meta.id,))
            conn.execute(
                "INSERT INTO raster_levels (raster_id, level, width, height, pixels) VALUES (?, 0, ?, ?, ?)",
                (meta.id, meta.width, meta.height, _pack_pixels(pixels)),
            )
        return meta.id

    def commit_pyramid(self, raster_id: str, levels: list[np.ndarray]) -> None:
        """Atomically add overview levels 1.. and flip the raster to 'ready'."""
        with self._write() as conn:
            if conn.execute("SELECT 1 FROM rasters WHERE id = ?", (raster_id,)).fetchone() is None:
                raise errors.NotFound(f"raster {raster_id!r} not found")
            conn.execute(
                "DELETE FROM raster_levels WHERE raster_id = ? AND level > 0", (raster_id,)
            )
            for lvl, arr in enumerate(levels[1:], start=1):
                conn.execute(
                    "INSERT INTO raster_levels (raster_id, level, width, height, pixels)"
                    " VALUES (?, ?, ?, ?, ?)",
                    (raster_id, lvl, arr.shape[2], arr.shape[1], _pack_pixels(arr)),
                )
            conn.execute("UPDATE rasters SET status = 'ready' WHERE id = ?", (raster_id,))

    def get_raster(self, raster_id: str) -> RasterDataset:
        row = self._conn().execute("SELECT * FROM rasters WHERE id = ?", (raster_id,)).fetchone()
        if row is None:
            raise errors.NotFound(f"raster {raster_id!r} not found")
        return self._raster_from_row(row)

    def get_raster_by_name(self, name: str) -> RasterDataset | None:
        row = self._conn().execute(
            "SELECT * FROM rasters WHERE name = ? COLLATE NOCASE", (name,)
        ).fetchone()
        return self._raster_from_row(row) if row else None

    def list_rasters(self) -> list[RasterDataset]:
        rows = self._conn().execute("SELECT * FROM rasters ORDER BY name").fetchall()
        return [self._raster_from_row(r) for r in rows]

    @staticmethod
    def _raster_from_row(row) -> RasterDataset:
        return RasterDataset(
            id=row["id"],
            name=row["name"],
            width=row["width"],
            height=row["height"],
            bands=row["bands"],
            origin=(row["origin_lon"], row["origin_lat"]),
            pixel_size=(row["dx"], row["dy"]),
            nodata=row["nodata"],
            enabled=bool(row["enabled"]),
            status=row["status"],
            vmin=row["vmin"],
            vmax=row["vmax"],
        )

    def set_raster_enabled(self, raster_id: str, enabled: bool) -> None:
        with self._write() as conn:
            cur = conn.execute(
                "UPDATE rasters SET enabled = ? WHERE id = ?", (int(enabled), raster_id)
            )
            if cur.rowcount == 0:
                raise errors.NotFound(f"raster {raster_id!r} not found")

    def level_count(self, raster_id: str) -> int:
        return self._conn().execute(
            "SELECT COUNT(*) FROM raster_levels WHERE raster_id = ?", (raster_id,)
        ).fetchone()[0]

    def get_level_pixels(self, raster_id: str, level: int) -> np.ndarray:
        row = self._conn().execute(
            "SELECT * FROM raster_levels WHERE raster_id = ? AND level = ?",
            (raster_id, level),
        ).fetchone()
        if row is None:
            raise errors.NotFound(f"raster {raster_id!r} has no level {level}")
        raster = self.get_raster(raster_id)
        return _unpack_pixels(row["pixels"], raster.bands, row["height"], row["width"])

    # ------------------------------------------------------------ attachments

    def put_attachment(self, attachment_id: str, site_id: str | None, name: str, data: bytes) -> str:
        with self._write() as conn:
            if site_id is not None and conn.execute(
                "SELECT 1 FROM sites WHERE id = ?", (site_id,)
            ).fetchone() is None:
                raise errors.DanglingReference("site", site_id)
            conn.execute(
                "INSERT OR REPLACE INTO attachments (id, site_id, name, data) VALUES (?, ?, ?, ?)",
                (attachment_id, site_id, name, data),
            )
        return attachment_id

    def get_attachment(self, attachment_id: str) -> tuple[str | None, str, bytes]:
        row = self._conn().execute(
            "SELECT * FROM attachments WHERE id = ?", (attachment_id,)
        ).fetchone()
        if row is None:
            raise errors.NotFound(f"attachment {attachment_id!r} not found")
        return row["site_id"], row["name"], row["data"]

    # ------------------------------------------------------ integrity checking

    def check_referential_integrity(self) -> list[str]:
        """Returns a list of violations (empty means consistent)."""
        conn = self._conn()
        problems = []
        queries = {
            "prediction->drone_sample": (
                "SELECT p.drone_sample_id FROM predictions p"
                " LEFT JOIN drone_samples d ON d.id = p.drone_sample_id WHERE d.id IS NULL"
            ),
            "prediction->model": (
                "SELECT p.model_id FROM predictions p"
                " LEFT JOIN models m ON m.id = p.model_id WHERE m.id IS NULL"
            ),
            "prediction->variable": (
                "SELECT p.variable_id FROM predictions p"
                " LEFT JOIN variables v ON v.id = p.variable_id WHERE v.id IS NULL"
            ),
            "measurement->variable": (
                "SELECT m.variable_id FROM lab_measurements m"
                " LEFT JOIN variables v ON v.id = m.variable_id WHERE v.id IS NULL"
            ),
            "measurement->lab_sample": (
                "SELECT m.sample_id FROM lab_measurements m"
                " LEFT JOIN lab_samples s ON s.id = m.sample_id WHERE s.id IS NULL"
            ),
            "lab_membership->site": (
                "SELECT l.site_id FROM lab_sample_sites l"
                " LEFT JOIN sites s ON s.id = l.site_id WHERE s.id IS NULL"
            ),
            "drone_membership->site": (
                "SELECT l.site_id FROM drone_sample_sites l"
                " LEFT JOIN sites s ON s.id = l.site_id WHERE s.id IS NULL"
            ),
        }
        for label, sql in queries.items():
            for row in conn.execute(sql):
                problems.append(f"{label}: {tuple(row)}")
        return problems
