"""Shared domain types: dense depth maps, sparse depth, sensor grids, cameras.

All types are immutable after construction (frozen dataclasses holding
read-only arrays) and validate their invariants eagerly. Invalid depth is
always expressed through masks, never through sentinel values; all depth
arithmetic is done in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ROTATION_TOL = 1e-9


def round_half_up(x):
    """Round to nearest integer with ties (x.5) going toward +inf."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DepthMap:
    """Dense per-pixel metric depth in meters with a validity mask.

    ``data`` and ``valid`` are (height, width) arrays; every valid pixel
    must hold a finite, strictly positive depth.
    """

    width: int
    height: int
    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if data.size != self.width * self.height:
            raise ValidationError(
                f"depth data has {data.size} values, expected "
                f"{self.width}x{self.height}={self.width * self.height}"
            )
        if valid.size != data.size:
            raise ValidationError("validity mask size does not match depth data")
        data = data.reshape(self.height, self.width)
        valid = valid.reshape(self.height, self.width)
        bad = valid & (~np.isfinite(data) | (data <= 0))
        if bad.any():
            raise ValidationError(
                f"{int(bad.sum())} valid pixels hold non-finite or non-positive depth"
            )
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def valid_values(self) -> np.ndarray:
        return self.data[self.valid]


def make_depth_map(width: int, height: int, data, valid_mask) -> DepthMap:
    """Build a DepthMap, forcing non-finite or non-positive pixels invalid."""
    data = np.asarray(data, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    if data.size != width * height or valid.size != width * height:
        raise ValidationError(
            f"expected {width}x{height} data and mask, got {data.size} and {valid.size}"
        )
    data = data.reshape(height, width)
    valid = valid.reshape(height, width) & np.isfinite(data) & (data > 0)
    return DepthMap(width=width, height=height, data=data, valid=valid)


@dataclass(frozen=True)
class SparseDepth:
    """High-resolution depth map where only a few pixels carry a value.

    Stored as parallel ``rows``/``cols``/``depths`` arrays in row-major
    pixel order with at most one entry per pixel.
    """

    width: int
    height: int
    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        depths = np.asarray(self.depths, dtype=np.float64)
        if not (rows.shape == cols.shape == depths.shape) or rows.ndim != 1:
            raise ValidationError("rows, cols and depths must be 1-D arrays of equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.height:
                raise ValidationError("point row outside image")
            if cols.min() < 0 or cols.max() >= self.width:
                raise ValidationError("point column outside image")
            if not np.all(np.isfinite(depths) & (depths > 0)):
                raise ValidationError("point depths must be finite and > 0")
            flat = rows * self.width + cols
            if np.unique(flat).size != flat.size:
                raise ValidationError("duplicate (row, col) entries")
        object.__setattr__(self, "rows", _freeze(rows))
        object.__setattr__(self, "cols", _freeze(cols))
        object.__setattr__(self, "depths", _freeze(depths))

    @classmethod
    def from_points(cls, width: int, height: int, points) -> "SparseDepth":
        """Build from (row, col, depth) triples, resolving pixel collisions
        by keeping the nearest (smallest) depth and sorting row-major."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.size == 0:
            empty = np.empty(0)
            return cls(width, height, empty.astype(np.int64), empty.astype(np.int64), empty)
        rows = pts[:, 0].astype(np.int64)
        cols = pts[:, 1].astype(np.int64)
        depths = pts[:, 2]
        flat = rows * width + cols
        # sort by (pixel, depth) so the first entry per pixel is the nearest
        order = np.lexsort((depths, flat))
        flat, rows, cols, depths = flat[order], rows[order], cols[order], depths[order]
        keep = np.ones(flat.size, dtype=bool)
        keep[1:] = flat[1:] != flat[:-1]
        return cls(width, height, rows[keep], cols[keep], depths[keep])

    def __len__(self) -> int:
        return int(self.rows.size)

    @property
    def points(self) -> list[tuple[int, int, float]]:
        return [
            (int(r), int(c), float(d))
            for r, c, d in zip(self.rows, self.cols, self.depths)
        ]

    def to_dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (data, valid) arrays of shape (height, width)."""
        data = np.zeros((self.height, self.width))
        valid = np.zeros((self.height, self.width), dtype=bool)
        data[self.rows, self.cols] = self.depths
        valid[self.rows, self.cols] = True
        return data, valid


@dataclass(frozen=True)
class DToFGrid:
    """Low-resolution grid of sensor measurements with per-cell validity."""

    rows: int
    cols: int
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64).reshape(self.rows, self.cols)
        valid = np.asarray(self.valid, dtype=bool).reshape(self.rows, self.cols)
        if (valid & (~np.isfinite(depth) | (depth <= 0))).any():
            raise ValidationError("valid cells must hold finite depth > 0")
        object.__setattr__(self, "depth", _freeze(depth))
        object.__setattr__(self, "valid", _freeze(valid))

    @classmethod
    def from_cells(cls, rows: int, cols: int, cells) -> "DToFGrid":
        """Build from (row, col, depth) triples; absent cells are invalid."""
        depth = np.zeros((rows, cols))
        valid = np.zeros((rows, cols), dtype=bool)
        for r, c, d in cells:
            r, c = int(r), int(c)
            if not (0 <= r < rows and 0 <= c < cols):
                raise ValidationError(f"cell ({r}, {c}) outside {rows}x{cols} grid")
            depth[r, c] = float(d)
            valid[r, c] = True
        return cls(rows, cols, depth, valid)

    def valid_cells(self) -> list[tuple[int, int, float]]:
        rr, cc = np.nonzero(self.valid)
        return [(int(r), int(c), float(self.depth[r, c])) for r, c in zip(rr, cc)]


def _check_rotation(R: np.ndarray, label: str) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValidationError(f"{label} must be 3x3")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise ValidationError(f"{label} not orthonormal (max |R^T R - I| = {err:.3e})")
    if np.linalg.det(R) <= 0:
        raise ValidationError(f"{label} must have determinant +1")
    return R


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: focal lengths and principal point in pixels, plus
    a world-to-camera rotation R and translation t in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        R = _check_rotation(self.R, "camera rotation")
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "t", _freeze(t))

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraRig:
    """A dToF sensor and RGB camera pair."""

    dtof: CameraModel
    rgb: CameraModel


@dataclass(frozen=True)
class FovRegion:
    """Projected sensor coverage on the image: upper/lower row bounds,
    left/right column bounds (pre-clipping, may extend past the image),
    and the per-cell footprint in pixels."""

    h_u: float
    h_l: float
    w_l: float
    w_r: float
    ifov_h: float
    ifov_w: float

    def __post_init__(self):
        if not (self.h_u < self.h_l and self.w_l < self.w_r):
            raise ValidationError("region bounds must satisfy h_u < h_l and w_l < w_r")
        if self.ifov_h < 1 or self.ifov_w < 1:
            raise ValidationError("iFoV dimensions must be at least 1 pixel")


def fov_coverage(region: FovRegion, width: int, height: int) -> float:
    """Fraction of a width x height image covered by the region after
    clipping it to the image bounds."""
    h0 = min(max(region.h_u, 0.0), float(height))
    h1 = min(max(region.h_l, 0.0), float(height))
    w0 = min(max(region.w_l, 0.0), float(width))
    w1 = min(max(region.w_r, 0.0), float(width))
    area = max(h1 - h0, 0.0) * max(w1 - w0, 0.0)
    return min(max(area / (float(width) * float(height)), 0.0), 1.0)
