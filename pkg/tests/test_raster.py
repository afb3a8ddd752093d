"""Raster decoding, pyramid math, tiles and rendering.

The pyramid oracle below is a deliberately naive nested-loop reimplementation;
TIFF fixtures are written with Pillow, so the reader is never checked against
code that shares its implementation.
"""

from __future__ import annotations

import io
import math
import random
import struct

import numpy as np
import pytest
from PIL import Image, TiffImagePlugin

from soilatlas import errors
from soilatlas.jobs import JobRegistry
from soilatlas.raster import formats
from soilatlas.raster.pyramid import build_pyramid, level_count, shrink_once
from soilatlas.raster.service import RasterService
from soilatlas.raster.types import RasterDataset, TILE_SIZE

# --------------------------------------------------------------------- oracle


def oracle_shrink(pixels: np.ndarray) -> np.ndarray:
    """Halve one (bands, h, w) array with scalar loops, NaN-aware.

    Mean of a block is anchor + sum(cell - anchor)/count with the first
    present cell (column-major within the block) as anchor, the documented
    evaluation order.
    """
    bands, h, w = pixels.shape
    out_h, out_w = (h + 1) // 2, (w + 1) // 2
    out = np.full((bands, out_h, out_w), np.nan)
    for b in range(bands):
        for r in range(out_h):
            for c in range(out_w):
                block = []
                for dc in (0, 1):
                    for dr in (0, 1):
                        rr, cc = 2 * r + dr, 2 * c + dc
                        if rr < h and cc < w and math.isfinite(pixels[b, rr, cc]):
                            block.append(float(pixels[b, rr, cc]))
                if block:
                    anchor = block[0]
                    total = 0.0
                    for v in block:
                        total += v - anchor
                    out[b, r, c] = anchor + total / len(block)
    return out


def oracle_pyramid(pixels: np.ndarray, tile_size: int = TILE_SIZE) -> list[np.ndarray]:
    levels = [pixels.astype(np.float64)]
    while max(levels[-1].shape[1], levels[-1].shape[2]) > tile_size:
        levels.append(oracle_shrink(levels[-1]))
    return levels


def random_grid(rng: random.Random, h: int, w: int, bands: int = 1, nan_share: float = 0.2):
    nprng = np.random.default_rng(rng.randint(0, 2**31))
    pixels = nprng.uniform(-50, 150, size=(bands, h, w))
    mask = nprng.random((bands, h, w)) < nan_share
    pixels[mask] = np.nan
    return pixels


# ----------------------------------------------------------- pyramid behaviour


class TestPyramid:
    def test_matches_oracle_exactly_on_random_grids(self):
        rng = random.Random(99)
        for _ in range(12):
            h, w = rng.randint(1, 70), rng.randint(1, 70)
            pixels = random_grid(rng, h, w, bands=rng.choice([1, 1, 3]))
            mine = build_pyramid(pixels, tile_size=8)
            ref = oracle_pyramid(pixels, tile_size=8)
            assert len(mine) == len(ref)
            for got, want in zip(mine, ref):
                assert got.shape == want.shape
                assert np.array_equal(got, want, equal_nan=True), "levels differ"

    def test_single_pixel_needs_no_overviews(self):
        levels = build_pyramid(np.ones((1, 1, 1)))
        assert len(levels) == 1

    def test_level_chain_stops_at_tile_size(self):
        pixels = np.zeros((1, 1025, 1025))
        levels = build_pyramid(pixels)
        dims = [(lvl.shape[1], lvl.shape[2]) for lvl in levels]
        assert dims == [(1025, 1025), (513, 513), (257, 257), (129, 129)]
        assert level_count(1025, 1025) == 4

    def test_all_nan_block_stays_nan(self):
        pixels = np.full((1, 2, 2), np.nan)
        out = shrink_once(pixels)
        assert out.shape == (1, 1, 1) and np.isnan(out[0, 0, 0])

    def test_mean_ignores_missing(self):
        pixels = np.array([[[1.0, np.nan], [3.0, np.nan]]])
        out = shrink_once(pixels)
        assert out[0, 0, 0] == 2.0

    def test_rebuild_is_bit_identical(self):
        pixels = random_grid(random.Random(5), 33, 47)
        a = build_pyramid(pixels, tile_size=8)
        b = build_pyramid(pixels.copy(), tile_size=8)
        for x, y in zip(a, b):
            assert np.array_equal(x, y, equal_nan=True)

    def test_odd_width_padding_does_not_leak(self):
        # right column of a 1-wide raster averages only real pixels
        pixels = np.array([[[5.0], [7.0]]])  # 2 rows, 1 col
        out = shrink_once(pixels)
        assert out[0, 0, 0] == 6.0

    def test_constant_raster_stays_constant_despite_holes(self):
        # 0.1 is not a dyadic float: a naive sum/count mean would drift here
        nprng = np.random.default_rng(12)
        pixels = np.full((1, 301, 517), 0.1)
        pixels[nprng.random((1, 301, 517)) < 0.3] = np.nan
        for level in build_pyramid(pixels, tile_size=8):
            finite = level[np.isfinite(level)]
            assert (finite == 0.1).all(), "constant value drifted"


# ------------------------------------------------------------------- formats


def write_geotiff(
    array: np.ndarray,
    origin=(9.0, 46.0),
    pixel_size=(0.01, 0.01),
    nodata=None,
    compression=None,
) -> bytes:
    img = Image.fromarray(array)
    ifd = TiffImagePlugin.ImageFileDirectory_v2()
    ifd[33550] = (float(pixel_size[0]), float(pixel_size[1]), 0.0)
    ifd.tagtype[33550] = 12
    ifd[33922] = (0.0, 0.0, 0.0, float(origin[0]), float(origin[1]), 0.0)
    ifd.tagtype[33922] = 12
    if nodata is not None:
        ifd[42113] = str(nodata)
        ifd.tagtype[42113] = 2
    buf = io.BytesIO()
    kwargs = {"tiffinfo": ifd}
    if compression:
        kwargs["compression"] = compression
    img.save(buf, format="TIFF", **kwargs)
    return buf.getvalue()


class TestTiffReader:
    def test_uint8_uncompressed(self):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
        grid = formats.decode(write_geotiff(arr))
        assert grid.pixels.shape == (1, 3, 4)
        np.testing.assert_array_equal(grid.pixels[0], arr.astype(np.float64))
        assert grid.origin == (9.0, 46.0)
        assert grid.pixel_size == (0.01, 0.01)

    def test_float32_with_nodata(self):
        arr = np.array([[1.5, -9999.0], [2.5, 3.5]], dtype=np.float32)
        grid = formats.decode(write_geotiff(arr, nodata=-9999.0))
        assert math.isnan(grid.pixels[0, 0, 1])
        assert grid.pixels[0, 1, 1] == 3.5
        assert grid.nodata == -9999.0

    def test_float32_deflate(self):
        rng = np.random.default_rng(7)
        arr = rng.uniform(0, 1, size=(40, 30)).astype(np.float32)
        grid = formats.decode(write_geotiff(arr, compression="tiff_adobe_deflate"))
        np.testing.assert_array_equal(grid.pixels[0], arr.astype(np.float64))

    def test_big_endian_handwritten(self):
        # minimal big-endian TIFF, 2x1 uint8, built byte by byte
        pixels = b"\x07\x2a"
        entries = [
            (256, 3, 1, struct.pack(">HH", 2, 0)),       # width 2
            (257, 3, 1, struct.pack(">HH", 1, 0)),       # height 1
            (258, 3, 1, struct.pack(">HH", 8, 0)),
            (259, 3, 1, struct.pack(">HH", 1, 0)),
            (273, 4, 1, None),                           # strip offset (patched)
            (277, 3, 1, struct.pack(">HH", 1, 0)),
            (279, 4, 1, struct.pack(">I", len(pixels))),
            (33550, 12, 3, "scale"),
            (33922, 12, 6, "tie"),
        ]
        header = struct.pack(">2sHI", b"MM", 42, 8)
        ifd_start = 8
        ifd_size = 2 + len(entries) * 12 + 4
        scale_off = ifd_start + ifd_size
        tie_off = scale_off + 24
        pix_off = tie_off + 48
        body = b""
        for tag, ftype, count, payload in entries:
            if payload == "scale":
                payload = struct.pack(">I", scale_off)
            elif payload == "tie":
                payload = struct.pack(">I", tie_off)
            elif payload is None:
                payload = struct.pack(">I", pix_off)
            body += struct.pack(">HHI", tag, ftype, count) + payload
        ifd = struct.pack(">H", len(entries)) + body + struct.pack(">I", 0)
        blob = (
            header + ifd
            + struct.pack(">3d", 0.5, 0.25, 0.0)
            + struct.pack(">6d", 0.0, 0.0, 0.0, 10.0, 50.0, 0.0)
            + pixels
        )
        grid = formats.decode(blob)
        assert grid.pixels.shape == (1, 1, 2)
        assert grid.pixels[0, 0, 0] == 7.0 and grid.pixels[0, 0, 1] == 42.0
        assert grid.origin == (10.0, 50.0)
        assert grid.pixel_size == (0.5, 0.25)

    def test_missing_georeference_rejected(self):
        img = Image.fromarray(np.zeros((2, 2), dtype=np.uint8))
        buf = io.BytesIO()
        img.save(buf, format="TIFF")
        with pytest.raises(errors.BadGeoreference):
            formats.decode(buf.getvalue())

    def test_garbage_rejected(self):
        with pytest.raises(errors.UnsupportedFormat):
            formats.decode(b"\x89PNG not a tiff at all")

    def test_truncated_rejected(self):
        blob = write_geotiff(np.zeros((8, 8), dtype=np.uint8))
        with pytest.raises(errors.UnsupportedFormat):
            formats.decode(blob[: len(blob) // 2])


class TestAsciiGrid:
    GRID = (
        "ncols 3\n"
        "nrows 2\n"
        "xllcorner 9.0\n"
        "yllcorner 45.0\n"
        "cellsize 0.5\n"
        "NODATA_value -9999\n"
        "1 2 3\n"
        "4 -9999 6\n"
    )

    def test_parses_header_and_body(self):
        grid = formats.decode(self.GRID.encode(), "field.asc")
        assert grid.pixels.shape == (1, 2, 3)
        assert grid.pixels[0, 0, 0] == 1.0
        assert math.isnan(grid.pixels[0, 1, 1])
        # origin is the top-left corner, one grid height above yllcorner
        assert grid.origin == (9.0, 45.0 + 2 * 0.5)
        assert grid.pixel_size == (0.5, 0.5)

    def test_center_variant(self):
        text = self.GRID.replace("xllcorner 9.0", "xllcenter 9.25").replace(
            "yllcorner 45.0", "yllcenter 45.25"
        )
        grid = formats.decode(text.encode(), "f.asc")
        assert grid.origin == (9.0, 46.0)

    def test_wrong_cell_count_rejected(self):
        with pytest.raises(errors.UnsupportedFormat):
            formats.decode(self.GRID.replace("1 2 3", "1 2").encode(), "f.asc")

    def test_missing_header_rejected(self):
        with pytest.raises(errors.UnsupportedFormat):
            formats.decode(b"ncols 3\nnrows 2\n1 2 3 4 5 6", "f.asc")


# ----------------------------------------------------------------- service


@pytest.fixture
def service(store):
    return RasterService(store, JobRegistry(synchronous=True))


def ingest_array(service, array2d, name="field", **geo):
    blob = write_geotiff(array2d.astype(np.float32), **geo)
    meta, _job = service.ingest(name, blob, "field.tif")
    return service.store.get_raster(meta.id)


class TestRasterService:
    def test_ingest_builds_pyramid_synchronously(self, service):
        arr = np.arange(300 * 520, dtype=np.float32).reshape(300, 520)
        meta = ingest_array(service, arr)
        assert meta.status == "ready"
        assert service.store.level_count(meta.id) == level_count(300, 520)

    def test_tiles_match_level_slices(self, service):
        rng = random.Random(11)
        arr = np.asarray(random_grid(rng, 300, 520)[0], dtype=np.float32)
        meta = ingest_array(service, arr)
        ref_levels = oracle_pyramid(arr[np.newaxis].astype(np.float64))
        for level, ref in enumerate(ref_levels):
            rows = math.ceil(ref.shape[1] / TILE_SIZE)
            cols = math.ceil(ref.shape[2] / TILE_SIZE)
            for row in range(rows):
                for col in range(cols):
                    tile = service.get_tile(meta.id, level, row, col)
                    window = ref[:, row * TILE_SIZE : (row + 1) * TILE_SIZE,
                                 col * TILE_SIZE : (col + 1) * TILE_SIZE]
                    expected = np.full((1, TILE_SIZE, TILE_SIZE), np.nan)
                    expected[:, : window.shape[1], : window.shape[2]] = window
                    assert np.array_equal(tile.pixels, expected, equal_nan=True)

    def test_tile_out_of_range(self, service):
        meta = ingest_array(service, np.zeros((10, 10), dtype=np.float32))
        with pytest.raises(errors.TileOutOfRange):
            service.get_tile(meta.id, 1, 0, 0)  # only level 0 exists
        with pytest.raises(errors.TileOutOfRange):
            service.get_tile(meta.id, 0, 1, 0)
        with pytest.raises(errors.TileOutOfRange):
            service.get_tile(meta.id, 0, 0, -1)

    def test_disabled_raster_hidden(self, service):
        meta = ingest_array(service, np.zeros((10, 10), dtype=np.float32))
        service.set_enabled(meta.id, False, actor_role="admin")
        with pytest.raises(errors.Disabled):
            service.get_tile(meta.id, 0, 0, 0)
        with pytest.raises(errors.Disabled):
            service.render_map([meta.name], meta.bounds, 10, 10)
        service.set_enabled(meta.id, True, actor_role="admin")
        service.get_tile(meta.id, 0, 0, 0)

    def test_enable_requires_admin(self, service):
        meta = ingest_array(service, np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(errors.Forbidden):
            service.set_enabled(meta.id, False, actor_role="registered")

    def test_building_raster_not_served(self, store):
        # async registry, but never let the job run: simulate by not waiting
        service = RasterService(store, JobRegistry(synchronous=True))
        blob = write_geotiff(np.zeros((4, 4), dtype=np.float32))
        grid = formats.decode(blob)
        meta = RasterDataset(
            id="r-building", name="half-done", width=4, height=4, bands=1,
            origin=grid.origin, pixel_size=grid.pixel_size,
        )
        store.put_raster(meta, grid.pixels)
        with pytest.raises(errors.Building):
            service.get_tile("r-building", 0, 0, 0)
        # startup recovery finishes the build
        service.requeue_stuck_builds()
        assert store.get_raster("r-building").status == "ready"
        service.get_tile("r-building", 0, 0, 0)

    def test_tile_png_decodes_to_expected_gray(self, service):
        arr = np.array([[0.0, 5.0], [10.0, np.nan]], dtype=np.float32)
        meta = ingest_array(service, arr, name="tiny")
        png = service.tile_png(meta.id, 0, 0, 0)
        img = Image.open(io.BytesIO(png))
        assert img.mode == "LA" and img.size == (TILE_SIZE, TILE_SIZE)
        gray = np.asarray(img.getchannel(0))
        alpha = np.asarray(img.getchannel(1))
        assert gray[0, 0] == 0 and gray[0, 1] == 127 and gray[1, 0] == 255
        assert alpha[1, 1] == 0 and alpha[0, 0] == 255
        assert alpha[0, 2] == 0  # padding transparent


class TestRenderMap:
    def test_exact_native_resolution(self, service):
        arr = np.arange(16, dtype=np.float32).reshape(4, 4)
        meta = ingest_array(service, arr, pixel_size=(0.01, 0.01), origin=(9.0, 46.0))
        png = service.render_map([meta.name], meta.bounds, 4, 4)
        img = np.asarray(Image.open(io.BytesIO(png)))
        assert img.shape == (4, 4, 4)
        expected = np.array([
            [int((v / 15.0) * 255) for v in row] for row in arr
        ], dtype=np.uint8)
        np.testing.assert_array_equal(img[:, :, 0], expected)
        np.testing.assert_array_equal(img[:, :, 0], img[:, :, 1])
        assert (img[:, :, 3] == 255).all()

    def test_outside_raster_is_transparent(self, service):
        arr = np.ones((4, 4), dtype=np.float32)
        meta = ingest_array(service, arr, pixel_size=(0.01, 0.01), origin=(9.0, 46.0))
        # bbox twice as wide as the raster, raster in the west half
        bbox = (9.0, 45.96, 9.08, 46.0)
        png = service.render_map([meta.name], bbox, 8, 4)
        img = np.asarray(Image.open(io.BytesIO(png)))
        assert (img[:, :4, 3] == 255).all()
        assert (img[:, 4:, 3] == 0).all()

    def test_layer_order_composites_last_on_top(self, service):
        low = np.zeros((4, 4), dtype=np.float32)
        high = np.full((4, 4), 7.0, dtype=np.float32)
        high[0, 0] = 0.0  # give it a range so the ramp is not degenerate
        a = ingest_array(service, low, name="under", origin=(9.0, 46.0))
        b = ingest_array(service, high, name="over", origin=(9.0, 46.0))
        bbox = a.bounds
        png_ab = service.render_map(["under", "over"], bbox, 4, 4)
        img = np.asarray(Image.open(io.BytesIO(png_ab)))
        assert img[2, 2, 0] == 255  # top layer value 7 -> scaled 255
        png_ba = service.render_map(["over", "under"], bbox, 4, 4)
        img2 = np.asarray(Image.open(io.BytesIO(png_ba)))
        assert img2[2, 2, 0] == 128  # constant layer renders mid-gray

    def test_coarse_request_uses_overview(self, store):
        service = RasterService(store, JobRegistry(synchronous=True))
        arr = np.zeros((600, 600), dtype=np.float32)
        meta = ingest_array(service, arr, name="big", pixel_size=(0.001, 0.001), origin=(9.0, 46.0))
        level = service._choose_level(meta, req_dx=0.002, req_dy=0.002)
        assert level == 1
        assert service._choose_level(meta, 0.0005, 0.0005) == 0
        # never coarser than what exists
        assert service._choose_level(meta, 10.0, 10.0) == store.level_count(meta.id) - 1

    def test_unknown_layer(self, service):
        with pytest.raises(errors.UnknownLayer):
            service.render_map(["ghost"], (0, 0, 1, 1), 4, 4)

    def test_rendering_is_deterministic(self, service):
        rng = random.Random(3)
        arr = np.asarray(random_grid(rng, 40, 40)[0], dtype=np.float32)
        meta = ingest_array(service, arr, name="det")
        bbox = meta.bounds
        assert service.render_map(["det"], bbox, 64, 64) == service.render_map(["det"], bbox, 64, 64)

    def test_bad_arguments(self, service):
        meta = ingest_array(service, np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(errors.InvalidInput):
            service.render_map([meta.name], (9.1, 45.0, 9.0, 46.0), 4, 4)
        with pytest.raises(errors.InvalidInput):
            service.render_map([meta.name], meta.bounds, 0, 4)
        with pytest.raises(errors.InvalidInput):
            service.render_map([meta.name], meta.bounds, 5000, 4)
        with pytest.raises(errors.InvalidInput):
            service.render_map([], meta.bounds, 4, 4)
