"""File I/O: PFM float maps, binary PGM images, DRSK checkpoints, JSON reports."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridcore import ParamStore


class FormatError(ValueError):
    """Base class for malformed or unsupported files."""


class HeaderError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ZeroScaleError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


@dataclass
class ImagePair:
    left: np.ndarray   # (1, H, W) in [0, 1]
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float32)
        self.right = np.asarray(self.right, dtype=np.float32)
        if self.left.ndim == 2:
            self.left = self.left[None]
        if self.right.ndim == 2:
            self.right = self.right[None]
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} differ in shape")
        for name, img in (("left", self.left), ("right", self.right)):
            if not np.all((img >= 0) & (img <= 1)):
                raise ValueError(f"{name} intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.left.shape[1]

    @property
    def width(self) -> int:
        return self.left.shape[2]


@dataclass
class DisparityMap:
    values: np.ndarray  # (H, W) pixels
    valid: np.ndarray   # (H, W) bool

    @classmethod
    def from_array(cls, values) -> "DisparityMap":
        """Non-finite entries become invalid (and are zeroed in ``values``)."""
        v = np.asarray(values, dtype=np.float32)
        valid = np.isfinite(v)
        return cls(np.where(valid, v, 0).astype(np.float32), valid)

    def to_array(self) -> np.ndarray:
        return np.where(self.valid, self.values, np.inf).astype(np.float32)


def _read_line(f) -> bytes:
    line = f.readline()
    if not line:
        raise HeaderError("unexpected end of header")
    return line


def read_pfm(path) -> np.ndarray:
    """Read a PFM file.

    Returns (H, W) for "Pf" and (3, H, W) for "PF".  Rows are stored
    bottom-up; the sign of the scale encodes endianness.
    """
    with open(path, "rb") as f:
        tag = _read_line(f).strip()
        if tag == b"Pf":
            channels = 1
        elif tag == b"PF":
            channels = 3
        else:
            raise HeaderError(f"{path}: not a PFM file (tag {tag!r})")
        dims = _read_line(f).split()
        try:
            width, height = int(dims[0]), int(dims[1])
        except (IndexError, ValueError):
            raise HeaderError(f"{path}: bad dimension line {dims!r}") from None
        if width <= 0 or height <= 0 or len(dims) != 2:
            raise HeaderError(f"{path}: bad dimensions {dims!r}")
        try:
            scale = float(_read_line(f).strip())
        except ValueError:
            raise HeaderError(f"{path}: bad scale line") from None
        if scale == 0:
            raise ZeroScaleError(f"{path}: zero scale")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        payload = f.read(count * 4)
    if len(payload) < count * 4:
        raise TruncatedError(f"{path}: expected {count * 4} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if channels == 1:
        return np.flipud(data.reshape(height, width)).copy()
    return np.flipud(data.reshape(height, width, 3)).transpose(2, 0, 1).copy()


def write_pfm(path, grid) -> None:
    """Write (H, W), (1, H, W) or (3, H, W) float data, little-endian, bottom-up."""
    arr = np.asarray(grid, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        tag, rows = b"Pf", np.flipud(arr)
    elif arr.ndim == 3 and arr.shape[0] == 3:
        tag, rows = b"PF", np.flipud(arr.transpose(1, 2, 0))
    else:
        raise ValueError(f"PFM grids need 1 or 3 channels, got shape {arr.shape}")
    h, w = rows.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(rows).astype("<f4").tobytes())


def to_luminance(grid: np.ndarray) -> np.ndarray:
    """Collapse a (3, H, W) color grid to (1, H, W) luminance."""
    g = np.asarray(grid, dtype=np.float32)
    if g.ndim == 2:
        return g[None]
    if g.shape[0] == 1:
        return g
    if g.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got shape {g.shape}")
    return (0.299 * g[0] + 0.587 * g[1] + 0.114 * g[2])[None].astype(np.float32)


def read_disparity(path) -> DisparityMap:
    grid = read_pfm(path)
    if grid.ndim == 3:
        grid = to_luminance(grid)[0]
    return DisparityMap.from_array(grid)


_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM, returning a (1, H, W) grid normalized by maxval."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PNM_TOKEN.match(raw, pos)
        if m is None:
            raise HeaderError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
        if tokens[0] != b"P5":
            if tokens[0] == b"P2":
                raise UnsupportedFormatError(f"{path}: ASCII PGM (P2) is not supported")
            raise HeaderError(f"{path}: not a binary PGM (tag {tokens[0]!r})")
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise HeaderError(f"{path}: bad PGM header {tokens!r}") from None
    if maxval <= 0:
        raise HeaderError(f"{path}: maxval must be positive")
    if maxval > 65535 or width <= 0 or height <= 0:
        raise HeaderError(f"{path}: bad PGM header {tokens!r}")
    dtype = ">u1" if maxval < 256 else ">u2"
    count = width * height
    nbytes = count * np.dtype(dtype).itemsize
    payload = raw[pos:pos + nbytes]
    if len(payload) < nbytes:
        raise TruncatedError(f"{path}: expected {nbytes} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    return data.reshape(1, height, width).astype(np.float32)


def write_pgm(path, grid, maxval: int = 65535) -> None:
    """Write intensities in [0, 1] as a binary PGM (16-bit when maxval > 255)."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[0]
    if not 0 < maxval <= 65535:
        raise ValueError("maxval must be in [1, 65535]")
    q = np.clip(np.rint(arr * maxval), 0, maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        f.write(q.astype(dtype).tobytes())


CHECKPOINT_MAGIC = b"DRSK"
CHECKPOINT_VERSION = 1


def save_checkpoint(store: ParamStore, path) -> None:
    """Serialize parameter values (gradients are ignored)."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(store))]
    for name, node in store.items():
        encoded = name.encode("utf-8")
        value = np.asarray(node.value, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, seed: int = 0) -> ParamStore:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    store = ParamStore(seed)
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        value = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        store.set(name, value)
    return store


def write_json(path, obj) -> None:
    """Write JSON with keys in insertion order (no sorting) and a trailing newline."""
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
