"""Grayscale image container, file I/O, synthetic generators, and the
geometric / contrast transforms used by the invariance tests.

Images are integer-valued grids with gray levels in {0, ..., levels-1}.
Pixel (x, y) maps to flat index y * width + x.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyImageError,
    ImageReadError,
    ParameterError,
    UnsupportedImageError,
)

SYNTHETIC_KINDS = ("stripes", "checkerboard", "blobs", "nested-squares")


@dataclass(frozen=True)
class GrayImage:
    """Immutable grayscale image.

    values : (height, width) int32 array, read-only.
    levels : number of representable gray levels g; values lie in [0, g).
    """

    values: np.ndarray
    levels: int = 256
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ParameterError("image values must be a 2-d array")
        if v.size == 0:
            raise EmptyImageError("zero-sized image")
        if self.levels < 2 or self.levels > 65536:
            raise ParameterError(f"levels must be in [2, 65536], got {self.levels}")
        v = v.astype(np.int32, copy=True)
        if v.min() < 0 or v.max() >= self.levels:
            raise ParameterError("pixel values outside [0, levels)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.size


def _luma(rgb: np.ndarray) -> np.ndarray:
    # ITU-R 601 weights, rounded half up to the nearest integer level
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.floor(y + 0.5).astype(np.int32)


_PGM_TOKEN = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_tokens(buf: bytes, count: int, path: str):
    """Read `count` whitespace/comment separated header tokens, return them
    plus the offset just past the last one."""
    pos = 0
    out = []
    for _ in range(count):
        m = _PGM_TOKEN.match(buf[pos:])
        if not m:
            raise ImageReadError(f"truncated PGM header in {path}")
        out.append(m.group(1))
        pos += m.end()
    return out, pos


def load_image(path: str) -> GrayImage:
    """Load a PGM (P2/P5, 8- or 16-bit) or PNG file as a GrayImage.

    Color PNG input is converted with the 601 luma weights. Raises
    ImageReadError / UnsupportedImageError / EmptyImageError naming the path.
    """
    path = str(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageReadError(f"cannot read image file {path}: {exc}") from exc

    if buf[:2] in (b"P2", b"P5"):
        return _parse_pgm(buf, path)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _parse_png(path)
    raise UnsupportedImageError(f"unrecognised image format in {path}")


def _parse_pgm(buf: bytes, path: str) -> GrayImage:
    try:
        (magic, w_s, h_s, maxval_s), offset = _pgm_tokens(buf, 4, path)
    except ImageReadError:
        raise
    try:
        w, h, maxval = int(w_s), int(h_s), int(maxval_s)
    except ValueError as exc:
        raise ImageReadError(f"malformed PGM header in {path}") from exc
    if w <= 0 or h <= 0:
        raise EmptyImageError(f"zero-sized image {path}")
    if not 0 < maxval < 65536:
        raise UnsupportedImageError(f"unsupported PGM maxval {maxval} in {path}")

    if magic == b"P2":
        fields = buf[offset:].split()
        if len(fields) < w * h:
            raise ImageReadError(f"truncated PGM pixel data in {path}")
        try:
            data = np.array([int(t) for t in fields[: w * h]], dtype=np.int64)
        except ValueError as exc:
            raise ImageReadError(f"bad ASCII pixel in {path}") from exc
    else:
        # single whitespace byte separates header from raster
        raster = buf[offset + 1 :]
        if maxval < 256:
            need = w * h
            if len(raster) < need:
                raise ImageReadError(f"truncated PGM pixel data in {path}")
            data = np.frombuffer(raster[:need], dtype=np.uint8).astype(np.int64)
        else:
            need = 2 * w * h
            if len(raster) < need:
                raise ImageReadError(f"truncated PGM pixel data in {path}")
            data = np.frombuffer(raster[:need], dtype=">u2").astype(np.int64)
    if data.max(initial=0) > maxval:
        raise ImageReadError(f"pixel above maxval in {path}")
    return GrayImage(data.reshape(h, w), levels=maxval + 1, meta={"path": path})


def _parse_png(path: str) -> GrayImage:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise UnsupportedImageError("Pillow is required for PNG input") from exc
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise EmptyImageError(f"zero-sized image {path}")
            mode = im.mode
            if mode == "L":
                arr, levels = np.asarray(im, dtype=np.int32), 256
            elif mode in ("I;16", "I;16B", "I;16L"):
                arr, levels = np.asarray(im, dtype=np.int64).astype(np.int32), 65536
            elif mode == "I":
                arr = np.asarray(im, dtype=np.int64)
                if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                    raise UnsupportedImageError(
                        f"PNG integer range beyond 16 bit in {path}"
                    )
                arr, levels = arr.astype(np.int32), 65536
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr, levels = _luma(rgb), 256
            else:
                raise UnsupportedImageError(f"unsupported PNG mode {mode} in {path}")
    except (OSError, SyntaxError) as exc:
        raise ImageReadError(f"cannot decode PNG {path}: {exc}") from exc
    return GrayImage(arr, levels=levels, meta={"path": path})


def save_pgm(image: GrayImage, path: str, ascii_format: bool = False) -> None:
    """Write a PGM file; 8-bit images use single bytes, wider ones 16-bit
    big-endian. Round-trips exactly through load_image."""
    maxval = image.levels - 1
    if maxval >= 65536:
        raise UnsupportedImageError("PGM supports at most 16-bit data")
    header = f"{'P2' if ascii_format else 'P5'}\n{image.width} {image.height}\n{maxval}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if ascii_format:
            lines = "\n".join(
                " ".join(str(v) for v in row) for row in image.values
            )
            fh.write(lines.encode("ascii") + b"\n")
        elif maxval < 256:
            fh.write(image.values.astype(np.uint8).tobytes())
        else:
            fh.write(image.values.astype(">u2").tobytes())


# ---------------------------------------------------------------------------
# synthetic textures
# ---------------------------------------------------------------------------


def _check_levels(low: int, high: int):
    if low == high:
        raise ParameterError("constant-value texture requested (low == high)")
    if not (0 <= low < 65536 and 0 <= high < 65536):
        raise ParameterError("gray levels out of range")


def _apply_noise(vals: np.ndarray, amplitude: int, rng) -> np.ndarray:
    if amplitude:
        vals = vals + rng.integers(-amplitude, amplitude + 1, size=vals.shape)
    return np.clip(vals, 0, None)


def generate_synthetic(kind: str, params: dict, seed: int = 0) -> GrayImage:
    """Deterministic synthetic texture.

    kind is one of stripes, checkerboard, blobs, nested-squares. params is a
    plain dict; unknown keys raise. Same (kind, params, seed) always yields
    the same image.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ParameterError(f"unknown synthetic kind {kind!r}")
    params = dict(params)
    rng = np.random.default_rng(seed)

    def take(name, default=None, required=False):
        if required and name not in params:
            raise ParameterError(f"{kind} requires parameter {name!r}")
        return params.pop(name, default)

    if kind == "nested-squares":
        size = int(take("size", required=True))
        levels_n = int(take("levels", 3))
        sides = take("sides", None)
        low = int(take("low", 50))
        high = int(take("high", 200))
        _check_levels(low, high)
        if levels_n < 1:
            raise ParameterError("nested-squares needs levels >= 1")
        if size < 2 * levels_n + 1:
            raise ParameterError("nested-squares size too small for level count")
        if sides is None:
            t = max(1, size // (2 * levels_n))
            sides = [size - 2 * t * i for i in range(levels_n)]
        sides = [int(s) for s in sides]
        if sorted(sides, reverse=True) != sides or sides[0] != size or sides[-1] < 1:
            raise ParameterError("sides must strictly decrease from size")
        if len(sides) != len(set(sides)):
            raise ParameterError("sides must strictly decrease from size")
        vals = np.empty((size, size), dtype=np.int64)
        for i, s in enumerate(sides):
            off = (size - s) // 2
            vals[off : off + s, off : off + s] = low if i % 2 == 0 else high
        img_levels = max(low, high) + 1
        _reject_leftover(params, kind)
        return GrayImage(vals, levels=img_levels, meta={"kind": kind})

    width = int(take("width", required=True))
    height = int(take("height", required=True))
    if width < 16 or height < 16:
        raise ParameterError(f"{kind} requires dimensions >= 16")
    noise = int(take("noise", 0))

    if kind == "stripes":
        period = int(take("period", required=True))
        orientation = take("orientation", "horizontal")
        low = int(take("low", 60))
        high = int(take("high", 190))
        phase = int(take("phase", 0))
        _check_levels(low, high)
        if period < 2:
            raise ParameterError("stripes period must be >= 2")
        if orientation not in ("horizontal", "vertical"):
            raise ParameterError("orientation must be horizontal or vertical")
        axis = np.arange(height if orientation == "horizontal" else width)
        band = ((axis + phase) % period) < (period // 2)
        line = np.where(band, low, high)
        vals = (
            np.repeat(line[:, None], width, axis=1)
            if orientation == "horizontal"
            else np.repeat(line[None, :], height, axis=0)
        )
    elif kind == "checkerboard":
        cell = int(take("cell", required=True))
        low = int(take("low", 60))
        high = int(take("high", 190))
        phase = int(take("phase", 0))
        _check_levels(low, high)
        if cell < 1:
            raise ParameterError("checkerboard cell must be >= 1")
        yy, xx = np.mgrid[0:height, 0:width]
        parity = ((yy + phase) // cell + (xx + phase) // cell) % 2
        vals = np.where(parity == 0, low, high)
    else:  # blobs
        n_blobs = int(take("n_blobs", required=True))
        radius = float(take("radius", required=True))
        radius_jitter = float(take("radius_jitter", 0.0))
        low = int(take("low", 60))
        high = int(take("high", 190))
        _check_levels(low, high)
        if n_blobs < 1 or radius <= 0:
            raise ParameterError("blobs needs n_blobs >= 1 and radius > 0")
        vals = np.full((height, width), low, dtype=np.int64)
        yy, xx = np.mgrid[0:height, 0:width]
        for _ in range(n_blobs):
            cy = rng.uniform(0, height)
            cx = rng.uniform(0, width)
            r = max(1.0, radius + rng.uniform(-radius_jitter, radius_jitter))
            vals[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = high
    _reject_leftover(params, kind)
    vals = _apply_noise(vals.astype(np.int64), noise, rng)
    img_levels = int(max(vals.max(), max(low, high)) + 1)
    return GrayImage(vals, levels=img_levels, meta={"kind": kind})


def _reject_leftover(params: dict, kind: str):
    if params:
        raise ParameterError(f"unknown {kind} parameters: {sorted(params)}")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def rescale(image: GrayImage, factor: float) -> GrayImage:
    """Bilinear resample by a single scale factor, rounding half up back to
    integer gray levels. factor must lie in [0.1, 4]; output sides below
    8 pixels are rejected."""
    if not 0.1 <= factor <= 4.0:
        raise ParameterError(f"scale factor {factor} outside [0.1, 4]")
    out_h = int(round(image.height * factor))
    out_w = int(round(image.width * factor))
    if out_h < 8 or out_w < 8:
        raise ParameterError(
            f"rescaled size {out_w}x{out_h} below the 8-pixel minimum"
        )
    if out_h == image.height and out_w == image.width:
        return GrayImage(image.values, levels=image.levels, meta=dict(image.meta))

    src = image.values.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (image.height / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (image.width / out_w) - 0.5
    ys = np.clip(ys, 0.0, image.height - 1)
    xs = np.clip(xs, 0.0, image.width - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, image.height - 1)
    x1 = np.minimum(x0 + 1, image.width - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bot * fy
    vals = np.clip(np.floor(out + 0.5), 0, image.levels - 1).astype(np.int32)
    return GrayImage(vals, levels=image.levels, meta=dict(image.meta))


def apply_contrast(image: GrayImage, mapping) -> GrayImage:
    """Remap gray levels through a strictly increasing lookup table.

    mapping must have one entry per input level; output levels grow to fit
    the mapped maximum."""
    lut = np.asarray(mapping, dtype=np.int64)
    if lut.ndim != 1 or lut.shape[0] != image.levels:
        raise ParameterError(
            f"lookup table must have {image.levels} entries, got {lut.shape}"
        )
    if np.any(np.diff(lut) <= 0):
        raise ParameterError("lookup table must be strictly increasing")
    if lut[0] < 0 or lut[-1] >= 65536:
        raise ParameterError("lookup table values out of range")
    vals = lut[image.values]
    return GrayImage(vals, levels=int(lut[-1]) + 1, meta=dict(image.meta))


def rotate90(image: GrayImage, turns: int = 1) -> GrayImage:
    """Rotate by a multiple of 90 degrees (counter-clockwise)."""
    vals = np.rot90(image.values, k=turns % 4)
    return GrayImage(np.ascontiguousarray(vals), levels=image.levels,
                     meta=dict(image.meta))
