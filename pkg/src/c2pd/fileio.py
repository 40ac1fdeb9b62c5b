"""Bit-exact readers and writers for depth grids, images, and parameters.

Formats:
  - PFM ("Pf"): 32-bit float grids, bottom-to-top rows; the scale token's
    sign encodes endianness and its magnitude is a value factor applied on
    load.  Writers emit little-endian scale -1.0, so a write/read round
    trip reproduces the float32-truncated values exactly.
  - PGM ("P5"): 8/16-bit visualization, linearly quantized over [min, max];
    the range is recorded in a ``<file>.range`` sidecar so reads can invert
    the quantization.
  - PPM ("P6", maxval 255): RGB input, scaled to [0, 1].
  - Parameter files: magic "C2PD", little-endian, versioned; layer weights
    and biases as raw float64.  Round trips are bit-identical.

Every reader length-checks against the actual file content before
touching header-declared sizes, so malformed headers fail cleanly.
"""

from __future__ import annotations

import csv
import os
import struct
from pathlib import Path

import numpy as np

from .capo import CapoParams
from .errors import C2pdError, FormatError, NumericError
from .grid import ensure_grid

PARAMS_MAGIC = b"C2PD"
PARAMS_VERSION = 1

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _Scanner:
    """Token scanner over raw bytes with optional '#' comment support."""

    def __init__(self, data: bytes, comments: bool):
        self.data = data
        self.pos = 0
        self.comments = comments

    def _skip_separators(self) -> None:
        data, n = self.data, len(self.data)
        while self.pos < n:
            c = self.data[self.pos:self.pos + 1]
            if c in (b"#",) and self.comments:
                nl = data.find(b"\n", self.pos)
                self.pos = n if nl < 0 else nl + 1
            elif c and c in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1] not in _WHITESPACE:
            self.pos += 1
        if self.pos == start:
            raise FormatError("unexpected end of header")
        return self.data[start:self.pos]

    def raster(self) -> bytes:
        # exactly one whitespace byte separates the header from the raster
        if self.pos >= len(self.data) or self.data[self.pos:self.pos + 1] not in _WHITESPACE:
            raise FormatError("missing separator before raster")
        return self.data[self.pos + 1:]


def _int_token(sc: _Scanner, what: str) -> int:
    tok = sc.token()
    try:
        value = int(tok)
    except ValueError as exc:
        raise FormatError(f"bad {what} token {tok!r}") from exc
    if value < 1:
        raise FormatError(f"{what} must be positive, got {value}")
    return value


def write_pfm(grid, path) -> None:
    """Write a grayscale PFM (little-endian, scale -1.0)."""
    grid = ensure_grid(grid)
    h, w = grid.shape
    raster = grid.astype("<f4")
    if not np.isfinite(raster).all():
        raise NumericError("values overflow 32-bit float range")
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(raster[::-1].tobytes())  # bottom-to-top row order


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float64 grid (values times |scale|)."""
    data = Path(path).read_bytes()
    sc = _Scanner(data, comments=False)
    magic = sc.token()
    if magic == b"PF":
        raise FormatError("color PFM is not a depth/guidance grid")
    if magic != b"Pf":
        raise FormatError(f"not a PFM file (magic {magic!r})")
    w = _int_token(sc, "width")
    h = _int_token(sc, "height")
    tok = sc.token()
    try:
        scale = float(tok)
    except ValueError as exc:
        raise FormatError(f"bad scale token {tok!r}") from exc
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"scale must be finite and nonzero, got {scale}")
    raster = sc.raster()
    expected = w * h * 4
    if len(raster) != expected:
        raise FormatError(f"raster holds {len(raster)} bytes, expected {expected}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(raster, dtype=dtype).astype(np.float64).reshape(h, w)[::-1]
    if not np.isfinite(values).all():
        raise FormatError("raster contains non-finite values")
    return values * abs(scale)


def _range_sidecar(path) -> str:
    return os.fspath(path) + ".range"


def write_pgm(grid, path, maxval: int = 65535) -> None:
    """Quantize a grid to P5 over its [min, max]; range goes to a sidecar."""
    grid = ensure_grid(grid)
    if maxval not in (255, 65535):
        raise FormatError(f"maxval must be 255 or 65535, got {maxval}")
    h, w = grid.shape
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        q = np.rint((grid - lo) / (hi - lo) * maxval)
    else:
        q = np.zeros_like(grid)
    samples = q.astype(">u2" if maxval == 65535 else "u1")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(samples.tobytes())
    with open(_range_sidecar(path), "w", encoding="utf-8") as f:
        f.write(f"{lo!r} {hi!r}\n")


def read_pgm(path) -> np.ndarray:
    """Read a P5 file written by :func:`write_pgm`, inverting the quantization."""
    data = Path(path).read_bytes()
    sc = _Scanner(data, comments=True)
    if sc.token() != b"P5":
        raise FormatError("not a P5 PGM file")
    w = _int_token(sc, "width")
    h = _int_token(sc, "height")
    maxval = _int_token(sc, "maxval")
    if maxval not in (255, 65535):
        raise FormatError(f"maxval must be 255 or 65535, got {maxval}")
    raster = sc.raster()
    itemsize = 2 if maxval == 65535 else 1
    expected = w * h * itemsize
    if len(raster) != expected:
        raise FormatError(f"raster holds {len(raster)} bytes, expected {expected}")
    q = np.frombuffer(raster, dtype=">u2" if maxval == 65535 else "u1")
    q = q.astype(np.float64).reshape(h, w)
    if q.max() > maxval:
        raise FormatError("sample exceeds declared maxval")
    sidecar = _range_sidecar(path)
    try:
        lo_s, hi_s = Path(sidecar).read_text(encoding="utf-8").split()
        lo, hi = float(lo_s), float(hi_s)
    except FileNotFoundError as exc:
        raise FormatError(f"missing range sidecar {sidecar}") from exc
    except ValueError as exc:
        raise FormatError(f"malformed range sidecar {sidecar}") from exc
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise FormatError(f"invalid range [{lo}, {hi}] in sidecar")
    return lo + q / maxval * (hi - lo)


def read_depth(path, unit: str = "cm") -> np.ndarray:
    """Read a depth grid (PFM or PGM by extension); meters are scaled to cm."""
    if unit not in ("cm", "m"):
        raise FormatError(f"unit must be 'cm' or 'm', got {unit!r}")
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        grid = read_pfm(path)
    elif suffix == ".pgm":
        grid = read_pgm(path)
    else:
        raise FormatError(f"unsupported depth extension {suffix!r} (use .pfm or .pgm)")
    return grid * 100.0 if unit == "m" else grid


def write_depth(grid, path) -> None:
    """Write a depth grid; format chosen by extension (.pfm or .pgm)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(grid, path)
    elif suffix == ".pgm":
        write_pgm(grid, path)
    else:
        raise FormatError(f"unsupported depth extension {suffix!r} (use .pfm or .pgm)")


def read_rgb(path) -> np.ndarray:
    """Read a P6 PPM (maxval 255) into an (H, W, 3) image in [0, 1]."""
    data = Path(path).read_bytes()
    sc = _Scanner(data, comments=True)
    if sc.token() != b"P6":
        raise FormatError("not a P6 PPM file")
    w = _int_token(sc, "width")
    h = _int_token(sc, "height")
    maxval = _int_token(sc, "maxval")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    raster = sc.raster()
    expected = w * h * 3
    if len(raster) != expected:
        raise FormatError(f"raster holds {len(raster)} bytes, expected {expected}")
    return np.frombuffer(raster, dtype=np.uint8).astype(np.float64).reshape(h, w, 3) / 255.0


def write_params(params: CapoParams, path) -> None:
    """Serialize a parameter set; round trips are bit-identical."""
    buf = bytearray()
    buf += PARAMS_MAGIC
    buf += struct.pack("<III", PARAMS_VERSION, params.n, len(params.layers))
    for w, b in params.layers:
        buf += struct.pack("<II", w.shape[0], w.shape[1])
        buf += np.ascontiguousarray(w, dtype="<f8").tobytes()
        buf += np.ascontiguousarray(b, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_params(path) -> CapoParams:
    """Deserialize a parameter set, validating magic, version, and layout."""
    data = Path(path).read_bytes()
    pos = 0

    def need(count: int, what: str) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise FormatError(f"truncated parameter file while reading {what}")
        chunk = data[pos:pos + count]
        pos += count
        return chunk

    if need(4, "magic") != PARAMS_MAGIC:
        raise FormatError("bad parameter-file magic")
    version, n, layer_count = struct.unpack("<III", need(12, "header"))
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported parameter-file version {version}")
    if layer_count < 1 or layer_count > len(data) // 8:
        raise FormatError(f"implausible layer count {layer_count}")
    layers = []
    for i in range(layer_count):
        out_dim, in_dim = struct.unpack("<II", need(8, f"layer {i} dims"))
        if out_dim < 1 or in_dim < 1 or out_dim * in_dim * 8 > len(data):
            raise FormatError(f"implausible layer {i} dims {out_dim}x{in_dim}")
        w = np.frombuffer(need(out_dim * in_dim * 8, f"layer {i} weights"), dtype="<f8")
        b = np.frombuffer(need(out_dim * 8, f"layer {i} bias"), dtype="<f8")
        layers.append((w.reshape(out_dim, in_dim), b))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last layer")
    try:
        return CapoParams(n=n, layers=tuple(layers))
    except C2pdError as exc:
        raise FormatError(f"inconsistent parameter file: {exc}") from exc


def write_history_csv(path, history) -> None:
    """Training log: one `step,l1,rmse` row per step, full float precision."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l1", "rmse"])
        for report in history:
            writer.writerow([report.step, repr(report.l1), repr(report.rmse)])


def append_metrics_csv(path, name: str, rmse: float, mad: float) -> None:
    """Append one `file,rmse_cm,mad_cm` row, writing the header when new."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(["file", "rmse_cm", "mad_cm"])
        writer.writerow([name, repr(float(rmse)), repr(float(mad))])
