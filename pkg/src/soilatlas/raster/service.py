"""Raster lifecycle: ingest, background overview builds, tiles, map images.

A freshly ingested raster stores its full-resolution pixels synchronously and
then builds overview levels in a background job; until that job lands, tile
and map requests treat the raster as unavailable. Disabling a raster hides it
from every viewer without deleting any data.
"""

from __future__ import annotations

import io
import math
import threading
import uuid
from collections import OrderedDict

import numpy as np
from PIL import Image

from .. import errors
from ..domain import ROLE_ADMIN
from ..jobs import JobRegistry
from ..storage import Store
from . import formats
from .pyramid import build_pyramid
from .types import GridData, RasterDataset, STATUS_BUILDING, STATUS_READY, TILE_SIZE, Tile

MAX_MAP_EDGE = 4096


class RasterService:
    _CACHE_SLOTS = 16

    def __init__(self, store: Store, jobs: JobRegistry):
        self.store = store
        self.jobs = jobs
        # decoded level arrays are immutable once a raster is ready, so a
        # small LRU keeps tile serving off the decompression path
        self._level_cache: "OrderedDict[tuple[str, int], np.ndarray]" = OrderedDict()
        self._cache_lock = threading.Lock()

    def _level_pixels(self, meta: RasterDataset, level: int) -> np.ndarray:
        if meta.status != STATUS_READY:
            return self.store.get_level_pixels(meta.id, level)
        key = (meta.id, level)
        with self._cache_lock:
            cached = self._level_cache.get(key)
            if cached is not None:
                self._level_cache.move_to_end(key)
                return cached
        pixels = self.store.get_level_pixels(meta.id, level)
        with self._cache_lock:
            self._level_cache[key] = pixels
            self._level_cache.move_to_end(key)
            while len(self._level_cache) > self._CACHE_SLOTS:
                self._level_cache.popitem(last=False)
        return pixels

    # ----------------------------------------------------------------- ingest

    def ingest(self, name: str, data: bytes, filename: str = "") -> tuple[RasterDataset, str]:
        """Decode, persist level 0, and schedule the overview build.

        Returns the stored dataset (status 'building') and the build job id.
        """
        grid = formats.decode(data, filename)
        meta = RasterDataset(
            id=str(uuid.uuid4()),
            name=name,
            width=grid.width,
            height=grid.height,
            bands=grid.bands,
            origin=grid.origin,
            pixel_size=grid.pixel_size,
            nodata=grid.nodata,
        )
        self.store.put_raster(meta, grid.pixels)
        job_id = self.jobs.submit("build_overviews", self.build_overviews, meta.id)
        return self.store.get_raster(meta.id), job_id

    def build_overviews(self, raster_id: str) -> dict:
        level0 = self.store.get_level_pixels(raster_id, 0)
        levels = build_pyramid(level0)
        self.store.commit_pyramid(raster_id, levels)
        return {"raster_id": raster_id, "levels": len(levels)}

    def requeue_stuck_builds(self) -> list[str]:
        """Re-schedule overview builds left half-done by a previous process."""
        job_ids = []
        for meta in self.store.list_rasters():
            if meta.status == STATUS_BUILDING:
                job_ids.append(self.jobs.submit("build_overviews", self.build_overviews, meta.id))
        return job_ids

    # ------------------------------------------------------------------ admin

    def set_enabled(self, raster_id: str, enabled: bool, actor_role: str) -> RasterDataset:
        if actor_role != ROLE_ADMIN:
            raise errors.Forbidden("only administrators may toggle raster visibility")
        self.store.set_raster_enabled(raster_id, enabled)
        return self.store.get_raster(raster_id)

    # ------------------------------------------------------------------ tiles

    def _visible(self, meta: RasterDataset) -> RasterDataset:
        if not meta.enabled:
            raise errors.Disabled(f"raster {meta.name!r} is disabled")
        if meta.status != STATUS_READY:
            raise errors.Building(f"raster {meta.name!r} is still building overviews")
        return meta

    def get_tile(self, raster_id: str, level: int, row: int, col: int) -> Tile:
        meta = self._visible(self.store.get_raster(raster_id))
        n_levels = self.store.level_count(raster_id)
        if not 0 <= level < n_levels:
            raise errors.TileOutOfRange(f"level {level} outside [0, {n_levels})")
        level_w, level_h = meta.level_dimensions(level)
        rows = math.ceil(level_h / TILE_SIZE)
        cols = math.ceil(level_w / TILE_SIZE)
        if not (0 <= row < rows and 0 <= col < cols):
            raise errors.TileOutOfRange(
                f"tile {row}/{col} outside grid {rows}x{cols} at level {level}"
            )
        pixels = self._level_pixels(meta, level)
        window = pixels[:, row * TILE_SIZE : (row + 1) * TILE_SIZE, col * TILE_SIZE : (col + 1) * TILE_SIZE]
        padded = np.full((meta.bands, TILE_SIZE, TILE_SIZE), np.nan, dtype=np.float64)
        padded[:, : window.shape[1], : window.shape[2]] = window
        return Tile(raster_id=raster_id, level=level, row=row, col=col, pixels=padded)

    def tile_png(self, raster_id: str, level: int, row: int, col: int) -> bytes:
        tile = self.get_tile(raster_id, level, row, col)
        meta = self.store.get_raster(raster_id)
        gray, alpha = _ramp(tile.pixels[0], meta.vmin, meta.vmax)
        img = Image.merge("LA", (Image.fromarray(gray, "L"), Image.fromarray(alpha, "L")))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    # -------------------------------------------------------------------- map

    def render_map(
        self,
        layer_names: list[str],
        bbox: tuple[float, float, float, float],
        width: int,
        height: int,
    ) -> bytes:
        """Compose the named rasters over a transparent canvas as one PNG.

        Layers are drawn in list order, later entries on top. Each raster is
        sampled from the coarsest overview level that still meets the
        requested resolution.
        """
        min_lon, min_lat, max_lon, max_lat = (float(v) for v in bbox)
        if not all(map(math.isfinite, (min_lon, min_lat, max_lon, max_lat))):
            raise errors.InvalidInput(f"bbox must be finite, got {bbox}")
        if min_lon >= max_lon or min_lat >= max_lat:
            raise errors.InvalidInput(f"bbox min must be < max: {bbox}")
        if not (1 <= width <= MAX_MAP_EDGE and 1 <= height <= MAX_MAP_EDGE):
            raise errors.InvalidInput(f"image size must be in [1, {MAX_MAP_EDGE}]")
        if not layer_names:
            raise errors.InvalidInput("at least one layer is required")

        canvas = np.zeros((height, width, 4), dtype=np.uint8)
        for name in layer_names:
            meta = self.store.get_raster_by_name(name)
            if meta is None:
                raise errors.UnknownLayer(f"no raster named {name!r}")
            self._visible(meta)
            self._paint(canvas, meta, (min_lon, min_lat, max_lon, max_lat))
        buf = io.BytesIO()
        Image.fromarray(canvas, "RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def _choose_level(self, meta: RasterDataset, req_dx: float, req_dy: float) -> int:
        """Coarsest stored level whose cells are at least as fine as requested."""
        available = self.store.level_count(meta.id)
        best = 0
        for level in range(available):
            dx = meta.pixel_size[0] * (2**level)
            dy = meta.pixel_size[1] * (2**level)
            if dx <= req_dx and dy <= req_dy:
                best = level
            else:
                break
        return best

    def _paint(self, canvas: np.ndarray, meta: RasterDataset, bbox) -> None:
        min_lon, min_lat, max_lon, max_lat = bbox
        height, width = canvas.shape[:2]
        req_dx = (max_lon - min_lon) / width
        req_dy = (max_lat - min_lat) / height
        level = self._choose_level(meta, req_dx, req_dy)
        pixels = self._level_pixels(meta, level)[0]
        level_h, level_w = pixels.shape
        cell_dx = meta.pixel_size[0] * (2**level)
        cell_dy = meta.pixel_size[1] * (2**level)
        origin_lon, origin_lat = meta.origin
        r_min_lon, r_min_lat, r_max_lon, r_max_lat = meta.bounds

        # geographic centers of the output pixels
        lons = min_lon + (np.arange(width) + 0.5) * req_dx
        lats = max_lat - (np.arange(height) + 0.5) * req_dy
        inside_lon = (lons >= r_min_lon) & (lons <= r_max_lon)
        inside_lat = (lats >= r_min_lat) & (lats <= r_max_lat)
        if not inside_lon.any() or not inside_lat.any():
            return
        cols = np.clip(((lons - origin_lon) // cell_dx).astype(np.int64), 0, level_w - 1)
        rows = np.clip(((origin_lat - lats) // cell_dy).astype(np.int64), 0, level_h - 1)
        sampled = pixels[np.ix_(rows, cols)]
        gray, alpha = _ramp(sampled, meta.vmin, meta.vmax)
        mask = inside_lat[:, np.newaxis] & inside_lon[np.newaxis, :] & (alpha > 0)
        for channel in range(3):
            canvas[:, :, channel] = np.where(mask, gray, canvas[:, :, channel])
        canvas[:, :, 3] = np.where(mask, 255, canvas[:, :, 3])


def _ramp(values: np.ndarray, vmin: float | None, vmax: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Grayscale min-max stretch; missing values become fully transparent."""
    present = np.isfinite(values)
    if vmin is None or vmax is None:
        gray = np.zeros(values.shape, dtype=np.uint8)
    elif vmax > vmin:
        scaled = (values - vmin) / (vmax - vmin)
        with np.errstate(invalid="ignore"):
            gray = np.clip(np.nan_to_num(scaled, nan=0.0) * 255.0, 0, 255).astype(np.uint8)
    else:
        gray = np.full(values.shape, 128, dtype=np.uint8)
    alpha = np.where(present, 255, 0).astype(np.uint8)
    return np.where(present, gray, 0).astype(np.uint8), alpha
