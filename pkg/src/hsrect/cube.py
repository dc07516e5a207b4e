"""Hyperspectral cube I/O: the HSC1 container, pseudo-RGB rasters, spectra CSV.

HSC1 layout (little-endian):
    magic  4 bytes  b"HSC1"
    H,W,S  3 x u32
    dtype  1 byte   (0 = float32)
    payload H*W*S float32, band-sequential (all of band 0, then band 1, ...),
    row-major within a band.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIIIB")  # 17 bytes


class CubeFormatError(ValueError):
    """Malformed or truncated cube file."""


@dataclass
class HsiCube:
    """Dense H x W x S reflectance cube, values in [0,1], wavelength-ordered bands.

    `id` feeds the deterministic noise seeding, so it must survive round trips
    (it is the file stem on read).
    """

    data: np.ndarray
    id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"cube must be H x W x S, got rank {arr.ndim}")
        if arr.shape[2] < 1:
            raise ValueError("cube needs at least one band")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def clamped(self) -> "HsiCube":
        return HsiCube(np.clip(self.data, 0.0, 1.0), self.id)


def read_cube(path) -> HsiCube:
    """Read an HSC1 file; values are clamped to [0,1] and id is the file stem."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CubeFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, h, w, s, dtype = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}")
    if dtype != 0:
        raise CubeFormatError(f"{path}: unknown dtype code {dtype}")
    need = h * w * s * 4
    payload = raw[_HEADER.size:]
    if len(payload) < need:
        raise CubeFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    flat = np.frombuffer(payload[:need], dtype="<f4").astype(np.float64)
    if np.isnan(flat).any():
        raise CubeFormatError(f"{path}: NaN in payload")
    data = flat.reshape(s, h, w).transpose(1, 2, 0)
    return HsiCube(np.clip(data, 0.0, 1.0), id=path.stem)


def write_cube(cube: HsiCube, path) -> None:
    """Write the cube bit-exactly per the HSC1 layout (float32 payload)."""
    path = Path(path)
    h, w, s = cube.data.shape
    header = _HEADER.pack(MAGIC, h, w, s, 0)
    payload = cube.data.transpose(2, 0, 1).astype("<f4").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def pseudo_rgb(cube: HsiCube, bands: tuple[int, int, int] = (25, 15, 5)) -> np.ndarray:
    """Render three bands (1-indexed, default 25/15/5) to an 8-bit RGB raster.

    A joint min-max stretch over the three selected bands, clipped to [0,1]
    and quantized to 0..255.  A constant selection yields an all-zero raster.
    """
    s = cube.bands
    for b in bands:
        if not 1 <= b <= s:
            raise ValueError(f"band {b} out of range 1..{s}")
    sel = cube.data[:, :, [b - 1 for b in bands]]
    lo, hi = sel.min(), sel.max()
    if hi == lo:
        stretched = np.zeros_like(sel)
    else:
        stretched = np.clip((sel - lo) / (hi - lo), 0.0, 1.0)
    return np.floor(stretched * 255.0 + 0.5).astype(np.uint8)


def write_ppm(raster: np.ndarray, path) -> None:
    """Binary PPM (P6), 8-bit RGB."""
    if raster.ndim != 3 or raster.shape[2] != 3 or raster.dtype != np.uint8:
        raise ValueError("raster must be H x W x 3 uint8")
    h, w = raster.shape[:2]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + raster.tobytes())
    tmp.replace(path)


def write_pgm(raster: np.ndarray, path) -> None:
    """Binary PGM (P5), 8-bit grayscale."""
    if raster.ndim != 2 or raster.dtype != np.uint8:
        raise ValueError("raster must be H x W uint8")
    h, w = raster.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes())
    tmp.replace(path)


def _csv_num(x: float) -> str:
    return repr(float(x))


def export_spectra_csv(cubes: list[tuple[str, HsiCube]], pixels: list[tuple[int, int]]) -> str:
    """Per-pixel spectral signatures as CSV text (one row per band).

    Columns: 1-based band index, then one column per (label, pixel) pair in
    the given order.  LF line endings, '.' decimal separator.
    """
    if not cubes:
        raise ValueError("no cubes given")
    s = cubes[0][1].bands
    for label, cube in cubes:
        if cube.bands != s:
            raise ValueError(f"cube {label!r} has {cube.bands} bands, expected {s}")
        for i, j in pixels:
            if not (0 <= i < cube.height and 0 <= j < cube.width):
                raise ValueError(f"pixel ({i},{j}) out of range for cube {label!r}")
    header = ["band"] + [f"{label}@{i}:{j}" for label, _ in cubes for (i, j) in pixels]
    lines = [",".join(header)]
    for b in range(s):
        row = [str(b + 1)]
        for _, cube in cubes:
            for i, j in pixels:
                row.append(_csv_num(cube.data[i, j, b]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
