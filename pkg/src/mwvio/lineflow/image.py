"""Grayscale images, box-filter pyramids, sub-pixel sampling and 8-bit PGM files."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import ParseError, TooSmall

MIN_IMAGE_SIDE = 32
MIN_LEVEL_SIDE = 16
FLOW_SMOOTH_SIGMA = 1.0
COARSE_SMOOTH_SIGMA = 3.0


@dataclass(frozen=True)
class GrayImage:
    """Row-major intensities in [0, 255], shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def checked(cls, data) -> "GrayImage":
        """Input image: at least 32 px on each side, finite, within [0, 255]."""
        img = cls(data)
        if min(img.width, img.height) < MIN_IMAGE_SIDE:
            raise TooSmall(f"image {img.width}x{img.height} below {MIN_IMAGE_SIDE} px")
        if not np.all(np.isfinite(img.data)) or img.data.min() < 0 or img.data.max() > 255:
            raise ValueError("intensities must be finite and within [0, 255]")
        return img


def downsample(a: np.ndarray) -> np.ndarray:
    """2x2 box filter followed by decimation; odd trailing rows/columns are dropped."""
    h, w = a.shape[0] // 2, a.shape[1] // 2
    a = a[:2 * h, :2 * w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


@dataclass(frozen=True)
class FlowLevel:
    """Smoothed intensity and central-difference gradients stacked as (H, W, 3)."""

    stack: np.ndarray

    @property
    def shape(self):
        return self.stack.shape[:2]


def flow_sigma(level, n_levels):
    """Smoothing used for flow at ``level``; the coarsest level is blurred more to widen the basin."""
    return FLOW_SMOOTH_SIGMA if level < n_levels - 1 else COARSE_SMOOTH_SIGMA


@dataclass(frozen=True)
class ImagePyramid:
    levels: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.levels)

    @cached_property
    def flow_levels(self) -> tuple:
        """Per level (H, W, 3) stacks of smoothed intensity and its x/y gradients, in float32."""
        out = []
        for k, lev in enumerate(self.levels):
            stack = np.empty(lev.data.shape + (3,), dtype=np.float32)
            s = ndimage.gaussian_filter(lev.data.astype(np.float32), flow_sigma(k, len(self.levels)),
                                        mode="nearest", truncate=3.0)
            stack[..., 0] = s
            stack[..., 2], stack[..., 1] = np.gradient(s)
            out.append(FlowLevel(stack))
        return tuple(out)


def build_pyramid(img: GrayImage, levels: int = 3) -> ImagePyramid:
    if not 2 <= levels <= 5:
        raise TooSmall(f"pyramid depth {levels} outside [2, 5]")
    h, w = img.height, img.width
    if min(h, w) < MIN_IMAGE_SIDE:
        raise TooSmall(f"image {w}x{h} below {MIN_IMAGE_SIDE} px")
    for _ in range(levels - 1):
        h, w = h // 2, w // 2
    if min(h, w) < MIN_LEVEL_SIDE:
        raise TooSmall(f"smallest level {w}x{h} below {MIN_LEVEL_SIDE} px")
    out = [img]
    for _ in range(levels - 1):
        out.append(GrayImage(downsample(out[-1].data)))
    return ImagePyramid(tuple(out))


def bilinear(a: np.ndarray, x, y):
    """Sample ``a`` (H, W) or (H, W, C) at float pixel coordinates.

    Returns ``(values, inside)``; coordinates outside the image are clamped and
    flagged in ``inside``.
    """
    h, w = a.shape[:2]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1.000001)
    yc = np.clip(y, 0, h - 1.000001)
    x0 = xc.astype(int)
    y0 = yc.astype(int)
    fx = xc - x0
    fy = yc - y0
    if a.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v = (a[y0, x0] * (1 - fx) * (1 - fy) + a[y0, x0 + 1] * fx * (1 - fy)
         + a[y0 + 1, x0] * (1 - fx) * fy + a[y0 + 1, x0 + 1] * fx * fy)
    return v, inside


# -- PGM (binary P5, 8-bit) --

def _pgm_tokens(buf: bytes, path):
    """Header tokens with positions, skipping '#' comments. Yields (token, offset, line, col)."""
    i, line, col_start = 0, 1, 0
    while i < len(buf):
        c = buf[i:i + 1]
        if c == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            if c == b"\n":
                line += 1
                col_start = i + 1
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
                j += 1
            yield buf[i:j], j, line, i - col_start + 1
            i = j


def read_pgm(path) -> GrayImage:
    buf = Path(path).read_bytes()
    toks = _pgm_tokens(buf, path)
    vals = []
    for k in range(4):
        try:
            tok, end, line, col = next(toks)
        except StopIteration:
            raise ParseError("truncated PGM header", 1, 1, str(path)) from None
        if k == 0:
            if tok != b"P5":
                raise ParseError(f"expected magic P5, got {tok!r}", line, col, str(path))
            continue
        if not tok.isdigit():
            raise ParseError(f"expected an integer, got {tok!r}", line, col, str(path))
        vals.append(int(tok))
    w, h, maxval = vals
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported (maxval {maxval})", line, col, str(path))
    data = buf[end + 1:]
    if len(data) < w * h:
        raise ParseError(f"expected {w * h} pixel bytes, found {len(data)}", line + 1, 1, str(path))
    return GrayImage(np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w))


def write_pgm(path, img: GrayImage):
    a = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        f.write(a.tobytes())
