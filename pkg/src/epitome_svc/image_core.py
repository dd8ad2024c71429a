"""Image planes, block addressing, dyadic resampling and distortion metrics.

An image plane is a 2-D ``float64`` numpy array of luma samples in
``[0, peak]``. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import RangeError, ShapeError

PEAK = 255.0

# Interpolation taps of the SHVC inter-layer upsampler (sum 64).
UPSAMPLE_TAPS = np.array([-1, 4, -11, 40, 40, -11, 4, -1], dtype=np.float64)
# Binomial low-pass applied before 2:1 decimation (sum 64).
DOWNSAMPLE_TAPS = np.array([1, 6, 15, 20, 15, 6, 1], dtype=np.float64)

BT601_WEIGHTS = (0.299, 0.587, 0.114)


class PixelRegion(NamedTuple):
    """Axis-aligned rectangle of pixels, origin at its top-left corner."""

    row: int
    col: int
    height: int
    width: int

    @property
    def origin(self) -> tuple[int, int]:
        return (self.row, self.col)

    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row, self.row + self.height),
                slice(self.col, self.col + self.width))

    def inside(self, shape: tuple[int, int]) -> bool:
        return (self.row >= 0 and self.col >= 0 and self.height > 0 and self.width > 0
                and self.row + self.height <= shape[0]
                and self.col + self.width <= shape[1])


@dataclass(frozen=True)
class BlockGrid:
    """Raster-ordered partition of a plane into square non-overlapping blocks."""

    shape: tuple[int, int]
    block_size: int
    blocks: list[PixelRegion] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h, w = self.shape
        b = self.block_size
        if b <= 0 or h <= 0 or w <= 0 or h % b or w % b:
            raise ShapeError(f"plane {self.shape} is not tiled by {b}x{b} blocks")
        blocks = [PixelRegion(r, c, b, b) for r in range(0, h, b) for c in range(0, w, b)]
        object.__setattr__(self, "blocks", blocks)

    @property
    def rows(self) -> int:
        return self.shape[0] // self.block_size

    @property
    def cols(self) -> int:
        return self.shape[1] // self.block_size

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[PixelRegion]:
        return iter(self.blocks)

    def origins(self) -> np.ndarray:
        """(n_blocks, 2) array of block origins in raster order."""
        return np.array([b.origin for b in self.blocks], dtype=np.int64).reshape(-1, 2)

    def block_vectors(self, plane: np.ndarray) -> np.ndarray:
        """All blocks of ``plane`` vectorized row-major, shape (n_blocks, b*b)."""
        b = self.block_size
        if plane.shape != self.shape:
            raise ShapeError(f"plane {plane.shape} does not match grid {self.shape}")
        t = np.asarray(plane, dtype=np.float64).reshape(self.rows, b, self.cols, b)
        return t.transpose(0, 2, 1, 3).reshape(-1, b * b)

    @classmethod
    def for_plane(cls, plane: np.ndarray, block_size: int) -> "BlockGrid":
        return cls(tuple(plane.shape), block_size)


def as_plane(samples, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Coerce ``samples`` (2-D array, or flat row-major sequence plus dims) to a plane."""
    a = np.asarray(samples, dtype=np.float64)
    if height is not None or width is not None:
        if height is None or width is None or a.size != height * width:
            raise ShapeError("samples.len must equal width * height")
        a = a.reshape(height, width)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ShapeError(f"expected a non-empty 2-D plane, got shape {a.shape}")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.size == 0:
        raise ShapeError("mse of empty arrays")
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, peak: float = PEAK) -> float:
    """PSNR in dB; ``math.inf`` when the inputs are identical."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def _filter_rows(x: np.ndarray, taps: np.ndarray, left: int) -> np.ndarray:
    """Correlate every row of ``x`` with ``taps``; output[j] uses x[j-left : j-left+len(taps)].

    Borders use edge replication.
    """
    n = len(taps)
    right = n - 1 - left
    padded = np.pad(x, ((0, 0), (left, right)), mode="edge")
    out = np.zeros_like(x, dtype=np.float64)
    w = x.shape[1]
    for t, tap in enumerate(taps):
        out += tap * padded[:, t:t + w]
    return out


def _upsample_rows(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    out = np.empty((h, 2 * w), dtype=np.float64)
    out[:, 0::2] = x
    # Odd output 2i+1 sits between inputs i and i+1: taps span i-3 .. i+4.
    out[:, 1::2] = _filter_rows(x, UPSAMPLE_TAPS, left=3) / 64.0
    return out


def upsample_2x_unclamped(plane) -> np.ndarray:
    """Separable 8-tap 2x interpolation without output clamping (linear in the input)."""
    x = as_plane(plane)
    x = _upsample_rows(x)
    return _upsample_rows(x.T).T


def upsample_2x(plane, peak: float = PEAK) -> np.ndarray:
    """Double both dimensions: even phases copy the input, odd phases use the 8-tap kernel."""
    return np.clip(upsample_2x_unclamped(plane), 0.0, peak)


def downsample_2x(plane, taps: np.ndarray = DOWNSAMPLE_TAPS) -> np.ndarray:
    """Separable DC-normalized low-pass followed by keeping even rows and columns."""
    x = as_plane(plane)
    if x.shape[0] % 2 or x.shape[1] % 2:
        raise ShapeError(f"downsample_2x needs even dimensions, got {x.shape}")
    taps = np.asarray(taps, dtype=np.float64)
    if len(taps) % 2 == 0:
        raise ValueError("downsampling kernel must have odd length")
    norm = taps.sum()
    half = len(taps) // 2
    y = _filter_rows(x, taps, left=half)[:, 0::2] / norm
    return _filter_rows(y.T, taps, left=half)[:, 0::2].T / norm


def extract_patch(plane: np.ndarray, origin: tuple[int, int], n: int) -> np.ndarray:
    """Row-major vector of the ``n``x``n`` patch at ``origin``."""
    r, c = origin
    region = PixelRegion(int(r), int(c), n, n)
    if not region.inside(plane.shape):
        raise RangeError(f"patch {region} outside plane {plane.shape}")
    return np.asarray(plane[region.slices()], dtype=np.float64).reshape(-1).copy()


def write_patch(plane: np.ndarray, origin: tuple[int, int], vec, n: int) -> None:
    """In-place inverse of :func:`extract_patch`."""
    r, c = origin
    region = PixelRegion(int(r), int(c), n, n)
    if not region.inside(plane.shape):
        raise RangeError(f"patch {region} outside plane {plane.shape}")
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != n * n:
        raise ShapeError(f"patch vector has {vec.size} samples, expected {n * n}")
    plane[region.slices()] = vec.reshape(n, n)


def crop_to_multiple(plane: np.ndarray, multiple: int) -> np.ndarray:
    h, w = plane.shape
    hh, ww = h - h % multiple, w - w % multiple
    if hh == 0 or ww == 0:
        raise ShapeError(f"plane {plane.shape} smaller than one {multiple}x{multiple} block")
    return plane[:hh, :ww]


def to_luma(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    wr, wg, wb = BT601_WEIGHTS
    return wr * rgb[..., 0] + wg * rgb[..., 1] + wb * rgb[..., 2]


# ---------------------------------------------------------------------------
# I/O


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1  # a single whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) graymap into a float plane."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ShapeError(f"{path}: not a PGM file")
    (w, h, maxval), pos = _pgm_tokens(data[2:], 3)
    pos += 2
    if magic == b"P2":
        vals = np.array(data[pos - 1:].split(), dtype=np.float64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        vals = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(np.float64)
    if vals.size != w * h:
        raise ShapeError(f"{path}: truncated raster")
    return vals.reshape(h, w)


def write_pgm(path, plane, peak: float = PEAK) -> None:
    """Write an 8-bit binary PGM; samples are rounded and clipped to [0, 255]."""
    a = np.asarray(plane, dtype=np.float64)
    if peak != 255:
        a = a * (255.0 / peak)
    a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(a.tobytes())


def load_image(path, block_size: int | None = None) -> np.ndarray:
    """Load a luma plane from PGM (or any Pillow-readable format, e.g. PNG).

    Color inputs are converted with BT.601 weights. With ``block_size`` the
    plane is cropped to a multiple of it.
    """
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        plane = read_pgm(path)
    else:
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise ShapeError(f"{path}: only PGM is supported without Pillow") from exc
        with Image.open(path) as im:
            arr = np.asarray(im)
        if arr.ndim == 3:
            arr = to_luma(arr[..., :3])
        plane = np.asarray(arr, dtype=np.float64)
    if block_size:
        plane = crop_to_multiple(plane, block_size)
    return plane
