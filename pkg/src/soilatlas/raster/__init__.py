"""Raster subsystem: file decoding, overview pyramids, tiles and map images."""

from .types import GridData, RasterDataset, Tile, TILE_SIZE

__all__ = ["GridData", "RasterDataset", "Tile", "TILE_SIZE"]
