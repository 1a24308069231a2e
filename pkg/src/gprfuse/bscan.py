"""B-scan data model, windowing, grayscale export and the GSF file format.

A B-scan stores amplitudes as a (rows, cols) float64 grid: rows are time
samples (spacing ``dt`` in ns), columns are traces (spacing ``dx`` in m).

GSF layout (all little-endian)::

    b"GSF1" | u32 rows | u32 cols | f64 dt_ns | f64 dx_m | f64 origin_x_m
    | rows*cols f32 amplitudes, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

GSF_MAGIC = b"GSF1"
_HEADER = struct.Struct("<4sIIddd")

DEFAULT_DX = 0.02  # m between adjacent trace columns
DEFAULT_DT = 0.2  # ns


class FormatError(ValueError):
    """Malformed GSF file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class WindowRangeError(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class BScan:
    data: np.ndarray
    dt: float = DEFAULT_DT
    dx: float = DEFAULT_DX
    origin_x: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"B-scan needs a non-empty 2-D grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("B-scan amplitudes must be finite")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError(f"dt and dx must be positive (dt={self.dt}, dx={self.dx})")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def replace(self, data: np.ndarray) -> "BScan":
        """Same metadata, new amplitudes."""
        return BScan(data, dt=self.dt, dx=self.dx, origin_x=self.origin_x)

    def __eq__(self, other):
        if not isinstance(other, BScan):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.dx == other.dx
            and self.origin_x == other.origin_x
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class Window:
    col_start: int
    width: int = 300
    scan_ref: str = ""

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"window width must be positive, got {self.width}")
        if self.col_start < 0:
            raise WindowRangeError(f"window starts at negative column {self.col_start}")

    @property
    def col_end(self) -> int:
        return self.col_start + self.width


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


def extract(scan: BScan, w: Window) -> BScan:
    """Slice the columns covered by ``w``; amplitudes are shared, not resampled."""
    if w.col_start + w.width > scan.cols:
        raise WindowRangeError(
            f"window [{w.col_start}, {w.col_end}) exceeds scan with {scan.cols} columns"
        )
    return BScan(
        scan.data[:, w.col_start : w.col_end],
        dt=scan.dt,
        dx=scan.dx,
        origin_x=scan.origin_x + w.col_start * scan.dx,
    )


def window_starts(cols: int, width: int, step: int, cover_tail: bool = True) -> list[int]:
    """Column starts 0, step, 2*step, ... of every full window.

    With ``cover_tail`` a right-aligned window is appended when the regular
    grid leaves trailing columns uninspected.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    if width > cols:
        raise ValueError(f"window width {width} exceeds scan width {cols}")
    starts = list(range(0, cols - width + 1, step))
    if cover_tail and starts[-1] + width < cols:
        starts.append(cols - width)
    return starts


def iter_windows(scan: BScan, width: int, step: int, scan_ref: str = "",
                 cover_tail: bool = True) -> Iterator[Window]:
    for start in window_starts(scan.cols, width, step, cover_tail):
        yield Window(start, width, scan_ref)


def to_gray(scan: BScan, lo: float | None = None, hi: float | None = None) -> GrayImage:
    """Clamp amplitudes to [lo, hi] and scale affinely to [0, 1].

    Bounds default to the 1st / 99th amplitude percentiles.
    """
    if lo is None or hi is None:
        p1, p99 = np.percentile(scan.data, [1.0, 99.0])
        lo = p1 if lo is None else lo
        hi = p99 if hi is None else hi
        if hi <= lo:
            hi = lo + 1.0
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError(f"gray bounds must be finite, got lo={lo}, hi={hi}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    pixels = (np.clip(scan.data, lo, hi) - lo) / (hi - lo)
    return GrayImage(pixels)


def write_pgm(gray: GrayImage, path: str | Path) -> None:
    """Binary 8-bit PGM (P5)."""
    levels = np.round(np.clip(gray.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{gray.cols} {gray.rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + levels.tobytes())


def read_pgm(path: str | Path) -> GrayImage:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FormatError("not a binary PGM", 0)
    cols, rows, maxval = (int(f) for f in fields[1:])
    pos += 1
    levels = np.frombuffer(raw, dtype=np.uint8, count=rows * cols, offset=pos)
    return GrayImage(levels.reshape(rows, cols) / float(maxval))


def encode_scan(scan: BScan) -> bytes:
    header = _HEADER.pack(GSF_MAGIC, scan.rows, scan.cols, scan.dt, scan.dx, scan.origin_x)
    return header + np.ascontiguousarray(scan.data, dtype="<f4").tobytes()


def decode_scan(raw: bytes) -> BScan:
    if len(raw) < 4 or raw[:4] != GSF_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {GSF_MAGIC!r}", 0)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", len(raw))
    _, rows, cols, dt, dx, origin_x = _HEADER.unpack_from(raw, 0)
    for name, value, off in (("dt", dt, 12), ("dx", dx, 20), ("origin_x", origin_x, 28)):
        if not np.isfinite(value):
            raise FormatError(f"non-finite {name}", off)
    if rows < 1 or cols < 1:
        raise FormatError(f"empty grid {rows}x{cols}", 4)
    if not (dt > 0 and dx > 0):
        raise FormatError(f"non-positive spacing dt={dt} dx={dx}", 12)
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"payload holds {len(raw) - _HEADER.size} bytes but header declares "
            f"{rows}x{cols} f32 ({4 * rows * cols} bytes)",
            min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite amplitude", _HEADER.size + 4 * int(bad[0]))
    return BScan(values.astype(np.float64), dt=dt, dx=dx, origin_x=origin_x)


def write_scan(scan: BScan, path: str | Path) -> None:
    """Write ``scan`` as GSF. Amplitudes are stored as float32."""
    Path(path).write_bytes(encode_scan(scan))


def read_scan(path: str | Path) -> BScan:
    return decode_scan(Path(path).read_bytes())
