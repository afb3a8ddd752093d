"""Value objects for georeferenced gridded data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import errors

TILE_SIZE = 256

STATUS_BUILDING = "building"
STATUS_READY = "ready"


@dataclass(frozen=True)
class RasterDataset:
    """Metadata for one stored raster.

    origin is the (lon, lat) of the outer corner of the top-left pixel;
    pixel_size is (dx, dy) in degrees with dx > 0 and dy > 0, rows running
    southward from the origin. vmin/vmax hold the finite value range captured
    at ingest and drive the default color ramp.
    """

    id: str
    name: str
    width: int
    height: int
    bands: int
    origin: tuple[float, float]
    pixel_size: tuple[float, float]
    nodata: float | None = None
    enabled: bool = True
    status: str = STATUS_BUILDING
    vmin: float | None = None
    vmax: float | None = None

    def __post_init__(self):
        if not self.id:
            raise errors.InvalidInput("raster id must be non-empty")
        if not self.name or not self.name.strip():
            raise errors.InvalidInput("raster name must be non-empty")
        if self.width < 1 or self.height < 1:
            raise errors.InvalidInput(f"raster dimensions must be >= 1, got {self.width}x{self.height}")
        if self.bands < 1:
            raise errors.InvalidInput(f"raster must have >= 1 band, got {self.bands}")
        dx, dy = self.pixel_size
        if not (math.isfinite(dx) and math.isfinite(dy)) or dx <= 0 or dy <= 0:
            raise errors.BadGeoreference(f"pixel size must be finite and positive, got {self.pixel_size}")
        lon, lat = self.origin
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise errors.BadGeoreference(f"origin must be finite, got {self.origin}")
        if self.status not in (STATUS_BUILDING, STATUS_READY):
            raise errors.InvalidInput(f"unknown raster status {self.status!r}")
        object.__setattr__(self, "origin", (float(lon), float(lat)))
        object.__setattr__(self, "pixel_size", (float(dx), float(dy)))
        if self.nodata is not None:
            object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_lon, min_lat, max_lon, max_lat) of the full grid."""
        lon, lat = self.origin
        dx, dy = self.pixel_size
        return (lon, lat - self.height * dy, lon + self.width * dx, lat)

    def level_dimensions(self, level: int) -> tuple[int, int]:
        w, h = self.width, self.height
        for _ in range(level):
            w = max(1, math.ceil(w / 2))
            h = max(1, math.ceil(h / 2))
        return w, h


@dataclass(frozen=True)
class Tile:
    """One tile_size x tile_size cut of an overview level.

    Edge tiles are padded with NaN so every tile has the same shape; pixels is
    (bands, tile_size, tile_size) float64 with NaN marking nodata.
    """

    raster_id: str
    level: int
    row: int
    col: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.level < 0 or self.row < 0 or self.col < 0:
            raise errors.TileOutOfRange(f"negative tile address {self.level}/{self.col}/{self.row}")
        if self.pixels.ndim != 3 or self.pixels.shape[1:] != (TILE_SIZE, TILE_SIZE):
            raise errors.InvalidInput(f"tile pixels must be (bands, {TILE_SIZE}, {TILE_SIZE})")


@dataclass(frozen=True)
class GridData:
    """A decoded raster file before it gets an identity: pixels plus georeference."""

    pixels: np.ndarray  # (bands, height, width) float64, NaN = nodata
    origin: tuple[float, float]
    pixel_size: tuple[float, float]
    nodata: float | None = None

    @property
    def bands(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[2])
