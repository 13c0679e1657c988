"""Project dToF sensor measurements into the RGB frame as sparse depth.

The chain per valid cell: back-project along its central ray, apply the
rig transform, perspective-project with the RGB intrinsics, and splat to
the nearest pixel (ties round toward +inf). Collisions keep the nearest
depth; points outside the image are dropped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraModel, CameraRig, DToFGrid, SparseDepth, _check_rotation, _freeze
from .errors import BehindCameraError, ValidationError


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation taking dToF-frame points to the RGB frame."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _check_rotation(self.R, "transform rotation")
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "t", _freeze(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def compose_transform(rig: CameraRig) -> RigidTransform:
    """Relative transform between the rig's two cameras:
    R = R_rgb R_dtof^T, t = t_rgb - R t_dtof."""
    R = rig.rgb.R @ rig.dtof.R.T
    t = rig.rgb.t - R @ rig.dtof.t
    return RigidTransform(R, t)


def transform_point(p, transform: RigidTransform) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValidationError("point coordinates must be finite")
    return transform.R @ p + transform.t


def project_point(p, cam: CameraModel) -> tuple[float, float]:
    """Perspective projection to subpixel (u, v). Raises for Z <= 0."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    x, y, z = p
    if z <= 0:
        raise BehindCameraError(f"point with Z = {z} is behind the camera")
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


def dtof_cell_to_point(grid: DToFGrid, row: int, col: int, dtof_cam: CameraModel) -> np.ndarray:
    """Back-project a cell's measurement along its central ray.

    The cell-center pixel of cell (row, col) is (u, v) = (col, row); the
    returned camera-frame point has Z equal to the measured depth.
    """
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise ValidationError(f"cell ({row}, {col}) outside {grid.rows}x{grid.cols} grid")
    if not grid.valid[row, col]:
        raise ValidationError(f"cell ({row}, {col}) holds no valid measurement")
    d = float(grid.depth[row, col])
    x = (col - dtof_cam.cx) / dtof_cam.fx * d
    y = (row - dtof_cam.cy) / dtof_cam.fy * d
    return np.array([x, y, d])


@dataclass
class ProjectionStats:
    """Bookkeeping for one projected frame."""

    cells_valid: int = 0
    projected: int = 0
    dropped_behind: int = 0
    dropped_outside: int = 0
    collisions: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def project_dtof_frame(
    grid: DToFGrid, rig: CameraRig, width: int, height: int
) -> tuple[SparseDepth, ProjectionStats]:
    """Project every valid cell of a frame into a width x height sparse map.

    Returns the sparse map plus statistics on dropped points. The stored
    depth is the transformed point's Z in the RGB frame; pixel collisions
    keep the smaller depth.
    """
    transform = compose_transform(rig)
    stats = ProjectionStats()
    best: dict[tuple[int, int], float] = {}
    for row, col, _ in grid.valid_cells():
        stats.cells_valid += 1
        p = transform_point(dtof_cell_to_point(grid, row, col, rig.dtof), transform)
        if p[2] <= 0:
            stats.dropped_behind += 1
            continue
        u, v = project_point(p, rig.rgb)
        px = int(np.floor(u + 0.5))
        py = int(np.floor(v + 0.5))
        if not (0 <= px < width and 0 <= py < height):
            stats.dropped_outside += 1
            continue
        key = (py, px)
        if key in best:
            stats.collisions += 1
            best[key] = min(best[key], p[2])
        else:
            best[key] = p[2]
    stats.projected = len(best)
    points = [(r, c, d) for (r, c), d in best.items()]
    return SparseDepth.from_points(width, height, points), stats
