"""2-D occupancy grid with an exact Euclidean distance field and PGM I/O.

Grid files are binary P5 portable graymaps (0 = occupied, 255 = free) with a
sidecar ``<name>.meta`` text file of ``key: value`` lines carrying
``resolution``, ``origin_x`` and ``origin_y``. The origin is the world
position of the lower-left corner of cell (0, 0); cell (ix, iy) covers
``[origin + ix*res, origin + (ix+1)*res)`` and its center sits at
``origin + (ix + 0.5) * res``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


@dataclass(eq=False)
class OccupancyGrid:
    """Binary occupancy raster. ``occupied[iy, ix]`` indexes row-major cells."""

    occupied: np.ndarray
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    distance_field: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.occupied = np.ascontiguousarray(self.occupied, dtype=bool)
        if self.occupied.ndim != 2:
            raise ValueError("occupancy raster must be 2-D")
        # Exact Euclidean distance (meters) from each cell center to the
        # nearest occupied cell center; zero on occupied cells.
        self.distance_field = (
            ndimage.distance_transform_edt(~self.occupied) * self.resolution
        )

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        ix = int(math.floor((x - self.origin_x) / self.resolution))
        iy = int(math.floor((y - self.origin_y) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_occupied_world(self, x: float, y: float) -> bool:
        """Occupancy of the cell containing (x, y); out-of-map counts occupied."""
        ix, iy = self.world_to_cell(x, y)
        if not self.in_bounds(ix, iy):
            return True
        return bool(self.occupied[iy, ix])

    def _interp_setup(self, x: float, y: float):
        # Continuous cell-center coordinates, clamped so the 2x2 patch exists.
        fx = (x - self.origin_x) / self.resolution - 0.5
        fy = (y - self.origin_y) / self.resolution - 0.5
        fx = min(max(fx, 0.0), self.width - 1.0)
        fy = min(max(fy, 0.0), self.height - 1.0)
        ix = min(int(fx), self.width - 2) if self.width > 1 else 0
        iy = min(int(fy), self.height - 2) if self.height > 1 else 0
        return fx - ix, fy - iy, ix, iy

    def clearance(self, x: float, y: float) -> float:
        """Distance to the nearest obstacle, bilinear between cell centers.

        Positions outside the map report zero clearance.
        """
        if (
            x < self.origin_x
            or y < self.origin_y
            or x > self.origin_x + self.width * self.resolution
            or y > self.origin_y + self.height * self.resolution
        ):
            return 0.0
        if self.width == 1 or self.height == 1:
            ix, iy = self.world_to_cell(x, y)
            ix = min(max(ix, 0), self.width - 1)
            iy = min(max(iy, 0), self.height - 1)
            return float(self.distance_field[iy, ix])
        tx, ty, ix, iy = self._interp_setup(x, y)
        d = self.distance_field
        return float(
            (1 - tx) * (1 - ty) * d[iy, ix]
            + tx * (1 - ty) * d[iy, ix + 1]
            + (1 - tx) * ty * d[iy + 1, ix]
            + tx * ty * d[iy + 1, ix + 1]
        )

    def clearance_gradient(self, x: float, y: float) -> tuple[float, float]:
        """Gradient of the interpolated clearance; zero outside the map."""
        if (
            x < self.origin_x
            or y < self.origin_y
            or x > self.origin_x + self.width * self.resolution
            or y > self.origin_y + self.height * self.resolution
            or self.width == 1
            or self.height == 1
        ):
            return 0.0, 0.0
        tx, ty, ix, iy = self._interp_setup(x, y)
        d = self.distance_field
        d00, d10 = d[iy, ix], d[iy, ix + 1]
        d01, d11 = d[iy + 1, ix], d[iy + 1, ix + 1]
        ddx = ((1 - ty) * (d10 - d00) + ty * (d11 - d01)) / self.resolution
        ddy = ((1 - tx) * (d01 - d00) + tx * (d11 - d10)) / self.resolution
        return float(ddx), float(ddy)


def save_pgm(grid: OccupancyGrid, path: str | Path) -> None:
    """Write the grid as binary P5 (0 = occupied, 255 = free) plus sidecar meta."""
    path = Path(path)
    data = np.where(grid.occupied, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())
    meta = path.with_suffix(".meta")
    meta.write_text(
        f"resolution: {grid.resolution!r}\n"
        f"origin_x: {grid.origin_x!r}\n"
        f"origin_y: {grid.origin_y!r}\n"
    )


class GridFormatError(ValueError):
    """Raised on malformed grid or sidecar files."""


def _read_pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated header tokens (after # comments)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise GridFormatError("truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1  # skip the single whitespace after maxval


def load_pgm(path: str | Path) -> OccupancyGrid:
    """Load a P5 grid and its ``.meta`` sidecar."""
    path = Path(path)
    raw = path.read_bytes()
    tokens, data_start = _read_pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise GridFormatError(f"{path}: expected binary PGM (P5), got {tokens[0]!r}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise GridFormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise GridFormatError(f"{path}: unsupported maxval {maxval}")
    body = raw[data_start : data_start + width * height]
    if len(body) != width * height:
        raise GridFormatError(f"{path}: PGM body truncated")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)

    meta_path = path.with_suffix(".meta")
    if not meta_path.exists():
        raise GridFormatError(f"missing sidecar metadata file {meta_path}")
    meta: dict[str, float] = {}
    for lineno, line in enumerate(meta_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise GridFormatError(f"{meta_path}:{lineno}: expected 'key: value'")
        key, _, value = line.partition(":")
        key = key.strip()
        if key not in ("resolution", "origin_x", "origin_y"):
            raise GridFormatError(f"{meta_path}:{lineno}: unknown key {key!r}")
        try:
            meta[key] = float(value)
        except ValueError as exc:
            raise GridFormatError(
                f"{meta_path}:{lineno}: non-numeric value for {key!r}"
            ) from exc
    if "resolution" not in meta:
        raise GridFormatError(f"{meta_path}: missing required key 'resolution'")
    return OccupancyGrid(
        occupied=pixels < 128,
        resolution=meta["resolution"],
        origin_x=meta.get("origin_x", 0.0),
        origin_y=meta.get("origin_y", 0.0),
    )
