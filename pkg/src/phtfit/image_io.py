"""Voxel image loading, preprocessing and synthetic phantom generation.

Conventions used throughout the package:

* an image with per-axis voxel counts ``dims`` covers the box
  ``[0, dims[k]]`` along axis k, in voxel units; voxel ``i`` occupies the
  unit cell ``[i, i+1)`` and its center sits at ``i + 0.5``;
* the object of interest has LOW intensity (``<= T`` is inside), the
  background is bright (255).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class ImageFormatError(ValueError):
    """Malformed header, size mismatch or unsupported bit depth."""


@dataclass(frozen=True)
class GrayImage:
    """A d-dimensional 8-bit voxel image (d = 2 or 3).

    data is indexed data[ix, iy(, iz)]; dims == data.shape.
    """

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim not in (2, 3):
            raise ImageFormatError(f"expected 2D or 3D data, got {arr.ndim}D")
        if arr.min() < 0 or arr.max() > 255:
            raise ImageFormatError("intensities must lie in [0, 255]")
        object.__setattr__(self, "data", arr.astype(np.uint8))
        sp = self.spacing or (1.0,) * arr.ndim
        if len(sp) != arr.ndim:
            raise ImageFormatError("spacing length must match dimension")
        object.__setattr__(self, "spacing", tuple(float(s) for s in sp))

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def dim(self) -> int:
        return self.data.ndim


def binarize(img: GrayImage, threshold: float) -> GrayImage:
    """Map intensities <= threshold to 0 (inside) and the rest to 255."""
    if not 0 < threshold < 255:
        raise ValueError("threshold must lie in (0, 255)")
    out = np.where(img.data <= threshold, 0, 255).astype(np.uint8)
    return GrayImage(out, img.spacing)


def load_image(path, format: str | None = None) -> GrayImage:
    """Load a PGM (2D) or RAW+JSON-header (3D) image.

    format may be "pgm", "raw3d" or None (inferred from the suffix).
    """
    path = Path(path)
    if format is None:
        format = "pgm" if path.suffix.lower() == ".pgm" else "raw3d"
    if format == "pgm":
        return _load_pgm(path)
    if format == "raw3d":
        return _load_raw3d(path)
    raise ImageFormatError(f"unsupported format {format!r}")


def _load_pgm(path: Path) -> GrayImage:
    raw = path.read_bytes()
    if raw[:2] not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a P2/P5 PGM file")
    binary = raw[:2] == b"P5"

    # Header tokens: magic, width, height, maxval (comments start with '#').
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"{path}: unsupported bit depth (maxval={maxval})")

    if binary:
        pos += 1  # single whitespace after maxval
        body = raw[pos : pos + width * height]
        if len(body) != width * height:
            raise ImageFormatError(f"{path}: pixel data size mismatch")
        arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    else:
        values = raw[pos:].split()
        if len(values) != width * height:
            raise ImageFormatError(f"{path}: pixel count mismatch")
        arr = np.array([int(v) for v in values], dtype=np.uint8).reshape(height, width)
    # PGM stores rows top-to-bottom; store x as the first index, y upward.
    return GrayImage(arr[::-1].T.copy())


def save_pgm(img: GrayImage, path, binary: bool = True) -> None:
    if img.dim != 2:
        raise ImageFormatError("PGM output requires a 2D image")
    rows = img.data.T[::-1]
    header = f"P5\n{img.dims[0]} {img.dims[1]}\n255\n".encode()
    if binary:
        Path(path).write_bytes(header + rows.tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in rows)
        Path(path).write_text(f"P2\n{img.dims[0]} {img.dims[1]}\n255\n{body}\n")


def _load_raw3d(path: Path) -> GrayImage:
    header_path = path.with_suffix(".json")
    if not header_path.exists():
        raise ImageFormatError(f"missing JSON sidecar header {header_path}")
    try:
        header = json.loads(header_path.read_text())
        dims = tuple(int(n) for n in header["dims"])
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ImageFormatError(f"{header_path}: malformed header") from exc
    if len(dims) != 3:
        raise ImageFormatError(f"{header_path}: dims must have 3 entries")
    if int(header.get("bits", 8)) != 8:
        raise ImageFormatError(f"{header_path}: unsupported bit depth")
    spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
    body = path.read_bytes()
    if len(body) != dims[0] * dims[1] * dims[2]:
        raise ImageFormatError(
            f"{path}: raw size {len(body)} does not match dims {dims}"
        )
    # x fastest-varying on disk.
    arr = np.frombuffer(body, dtype=np.uint8).reshape(dims[::-1]).T
    return GrayImage(arr.copy(), spacing)


def save_raw3d(img: GrayImage, path) -> None:
    if img.dim != 3:
        raise ImageFormatError("RAW3D output requires a 3D image")
    path = Path(path)
    path.write_bytes(img.data.T.tobytes())
    path.with_suffix(".json").write_text(
        json.dumps({"dims": list(img.dims), "spacing": list(img.spacing), "bits": 8})
    )


@dataclass(frozen=True)
class PhantomShape:
    """Analytic description of a synthesized phantom (test side channel).

    signed_distance is negative inside the object; boundary_distance gives
    the unsigned distance to the object boundary.
    """

    kind: str
    params: dict
    signed_distance: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.signed_distance(np.atleast_2d(points)) <= 0.0

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_distance(np.atleast_2d(points)))


PHANTOM_KINDS = (
    "disk",
    "annulus",
    "plate-with-hole-quarter",
    "sphere",
    "hollow-sphere-octant",
    "cube-with-spherical-hole",
)


def synthesize_phantom(
    kind: str, dims: Sequence[int], **params
) -> tuple[GrayImage, PhantomShape]:
    """Create a binary phantom image (0 inside the shape, 255 outside).

    Returns the image together with the analytic shape used to rasterize
    it, so tests can compare against exact geometry.
    """
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    sdf = _phantom_sdf(kind, dims, params)
    axes = [np.arange(n) + 0.5 for n in dims]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    inside = sdf(grid) <= 0.0
    if not inside.any():
        raise ValueError(f"phantom {kind!r} with {params} lies outside the image")
    data = np.where(inside.reshape(dims), 0, 255).astype(np.uint8)
    return GrayImage(data), PhantomShape(kind, dict(params), sdf)


def _phantom_sdf(kind: str, dims, params) -> Callable[[np.ndarray], np.ndarray]:
    d = len(dims)
    center = np.asarray(params.get("center", [n / 2.0 for n in dims]), dtype=float)

    def radial(points):
        return np.linalg.norm(np.atleast_2d(points) - center, axis=1)

    def corner_radial(points):
        return np.linalg.norm(np.atleast_2d(points), axis=1)

    if kind == "disk" or kind == "sphere":
        if (kind == "disk") != (d == 2):
            raise ValueError(f"{kind} phantom needs a {'2D' if kind == 'disk' else '3D'} image")
        radius = float(params["radius"])
        _check_fits(radius <= min(min(center), *(n - c for n, c in zip(dims, center))), kind)
        return lambda p: radial(p) - radius

    if kind == "annulus":
        if d != 2:
            raise ValueError("annulus phantom needs a 2D image")
        r_in, r_out = float(params["r_inner"]), float(params["r_outer"])
        _check_fits(0 < r_in < r_out <= min(dims) / 2.0, kind)
        return lambda p: np.maximum(radial(p) - r_out, r_in - radial(p))

    if kind == "plate-with-hole-quarter":
        if d != 2:
            raise ValueError("plate-with-hole-quarter phantom needs a 2D image")
        radius = float(params["radius"])
        _check_fits(0 < radius < min(dims), kind)
        # Material everywhere except the quarter disk at the (0,0) corner.
        return lambda p: radius - corner_radial(p)

    if kind == "cube-with-spherical-hole":
        if d != 3:
            raise ValueError("cube-with-spherical-hole phantom needs a 3D image")
        radius = float(params["radius"])
        _check_fits(0 < radius < min(dims), kind)
        return lambda p: radius - corner_radial(p)

    if kind == "hollow-sphere-octant":
        if d != 3:
            raise ValueError("hollow-sphere-octant phantom needs a 3D image")
        r_in, r_out = float(params["r_inner"]), float(params["r_outer"])
        _check_fits(0 < r_in < r_out <= min(dims), kind)
        return lambda p: np.maximum(corner_radial(p) - r_out, r_in - corner_radial(p))

    raise ValueError(f"unknown phantom kind {kind!r}; choose one of {PHANTOM_KINDS}")


def _check_fits(ok: bool, kind: str) -> None:
    if not ok:
        raise ValueError(f"phantom {kind!r} does not fit inside the image bounds")
