"""File formats used by the command line tools.

Depth maps travel as 16-bit grayscale PNG (millimeters, 0 = invalid) or
PFM (float32 meters, little-endian, rows stored bottom-up; non-positive
or non-finite samples are invalid). Sparse depth also has a CSV form
with header ``row,col,depth_m``. Affinity and bin-weight volumes are raw
little-endian float32 with a JSON sidecar ``<path>.json`` holding
{height, width, channels}; affinity channels store the self weight
first, then the neighbors in row-major window order.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .core import CameraModel, CameraRig, DepthMap, DToFGrid, SparseDepth, round_half_up
from .errors import FormatError, ValidationError
from .refine import AffinityField

MAX_PNG_DEPTH_M = 65.535


def write_depth_png(path, data, valid) -> None:
    """Depth in meters to 16-bit PNG millimeters; invalid pixels become 0.

    Depths quantizing below 1 mm fall onto the invalid marker and are
    lost; depths above the 16-bit ceiling raise.
    """
    data = np.asarray(data, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if np.any(data[valid] > MAX_PNG_DEPTH_M):
        raise ValidationError(f"depths above {MAX_PNG_DEPTH_M} m do not fit 16-bit millimeters")
    mm = np.where(valid, round_half_up(data * 1000.0), 0.0)
    Image.fromarray(mm.astype("<u2")).save(path, format="PNG")


def read_depth_png(path) -> DepthMap:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel depth PNG")
    data = arr.astype(np.float64) / 1000.0
    valid = arr > 0
    return DepthMap(width=arr.shape[1], height=arr.shape[0], data=data, valid=valid)


def write_pfm(path, data, top_down: bool = False) -> None:
    """Single-channel PFM, float32 little-endian.

    Rows are stored bottom-up per convention unless ``top_down`` is set;
    the header scale is negative to flag little-endian byte order.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValidationError("PFM writer takes a 2-D array")
    rows = data if top_down else data[::-1]
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{data.shape[1]} {data.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(rows.astype("<f4").tobytes())


def read_pfm(path, top_down: bool = False) -> np.ndarray:
    """Read a single-channel PFM, honoring the endianness sign in the header."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise FormatError(f"{path}: not a single-channel PFM file")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimensions")
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        payload = fh.read(width * height * 4)
    if len(payload) != width * height * 4:
        raise FormatError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.float64)
    return arr if top_down else arr[::-1].copy()


def read_depth_pfm(path) -> DepthMap:
    data = read_pfm(path)
    valid = np.isfinite(data) & (data > 0)
    return DepthMap(width=data.shape[1], height=data.shape[0], data=data, valid=valid)


def read_depth_auto(path) -> DepthMap:
    """Dispatch on suffix: .png (16-bit mm) or .pfm (float meters)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_depth_png(path)
    if suffix == ".pfm":
        return read_depth_pfm(path)
    raise FormatError(f"{path}: unsupported depth format {suffix!r} (use .png or .pfm)")


def write_depth_auto(path, data, valid) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        write_depth_png(path, data, valid)
    elif suffix == ".pfm":
        out = np.where(np.asarray(valid, dtype=bool), np.asarray(data, dtype=np.float64), 0.0)
        write_pfm(path, out)
    else:
        raise FormatError(f"{path}: unsupported depth format {suffix!r} (use .png or .pfm)")


def write_sparse_csv(path, sparse: SparseDepth) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "depth_m"])
        for r, c, d in zip(sparse.rows, sparse.cols, sparse.depths):
            writer.writerow([int(r), int(c), repr(float(d))])


def read_points_csv(path) -> list[tuple[int, int, float]]:
    """Rows of a ``row,col,depth_m`` file; absent cells are simply missing."""
    points = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return points
        if [h.strip().lower() for h in header] != ["row", "col", "depth_m"]:
            raise FormatError(f"{path}: expected header 'row,col,depth_m'")
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            try:
                points.append((int(fields[0]), int(fields[1]), float(fields[2])))
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad point row {fields!r}") from exc
    return points


def read_sparse_auto(path, width: int | None = None, height: int | None = None) -> SparseDepth:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        depth = read_depth_png(path)
        rows, cols = np.nonzero(depth.valid)
        pts = np.stack([rows, cols, depth.data[rows, cols]], axis=1)
        return SparseDepth.from_points(depth.width, depth.height, pts)
    if suffix == ".csv":
        if width is None or height is None:
            raise ValidationError("CSV sparse depth needs explicit width and height")
        return SparseDepth.from_points(width, height, read_points_csv(path))
    raise FormatError(f"{path}: unsupported sparse format {suffix!r} (use .png or .csv)")


def write_sparse_auto(path, sparse: SparseDepth) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        write_sparse_csv(path, sparse)
    elif suffix == ".png":
        data, valid = sparse.to_dense()
        write_depth_png(path, data, valid)
    else:
        raise FormatError(f"{path}: unsupported sparse format {suffix!r} (use .png or .csv)")


def read_dtof_csv(path, rows: int | None = None, cols: int | None = None) -> DToFGrid:
    """Sensor grid from CSV; grid size defaults to the max index seen."""
    cells = read_points_csv(path)
    if rows is None:
        rows = 1 + max((r for r, _, _ in cells), default=-1)
    if cols is None:
        cols = 1 + max((c for _, c, _ in cells), default=-1)
    if rows <= 0 or cols <= 0:
        return DToFGrid(rows=max(rows, 1), cols=max(cols, 1),
                        depth=np.zeros((max(rows, 1), max(cols, 1))),
                        valid=np.zeros((max(rows, 1), max(cols, 1)), dtype=bool))
    return DToFGrid.from_cells(rows, cols, cells)


def read_rgb_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def read_materials(path) -> np.ndarray:
    """Material probability map: grayscale PNG scaled to [0, 1], or raw PFM."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        with Image.open(path) as img:
            peak = 255.0 if img.mode == "L" else 65535.0
            arr = np.asarray(img.convert("I")).astype(np.float64)
        return np.clip(arr / peak, 0.0, 1.0)
    if suffix == ".pfm":
        return np.clip(read_pfm(path), 0.0, 1.0)
    raise FormatError(f"{path}: unsupported material map format {suffix!r}")


def _camera_from_dict(raw: dict, label: str) -> CameraModel:
    try:
        R = np.asarray(raw["R"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(raw["t"], dtype=np.float64).reshape(3)
        return CameraModel(fx=float(raw["fx"]), fy=float(raw["fy"]),
                           cx=float(raw["cx"]), cy=float(raw["cy"]), R=R, t=t)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad {label} camera block: {exc}") from exc


def read_rig_json(path) -> CameraRig:
    """Rig file: {"dtof": {fx,fy,cx,cy,R:[9],t:[3]}, "rgb": {...}}, R row-major."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if "dtof" not in raw or "rgb" not in raw:
        raise FormatError(f"{path}: rig JSON needs 'dtof' and 'rgb' blocks")
    return CameraRig(
        dtof=_camera_from_dict(raw["dtof"], "dtof"),
        rgb=_camera_from_dict(raw["rgb"], "rgb"),
    )


def write_rig_json(path, rig: CameraRig) -> None:
    def block(cam: CameraModel) -> dict:
        return {
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "R": [float(v) for v in cam.R.reshape(-1)],
            "t": [float(v) for v in cam.t],
        }

    write_json(path, {"schema_version": 1, "dtof": block(rig.dtof), "rgb": block(rig.rgb)})


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_raw_volume(path, volume: np.ndarray) -> None:
    """Raw little-endian float32 (height, width, channels) plus sidecar."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim == 2:
        volume = volume[:, :, None]
    if volume.ndim != 3:
        raise ValidationError("raw volume must be (H, W) or (H, W, C)")
    with open(path, "wb") as fh:
        fh.write(volume.astype("<f4").tobytes())
    write_json(_sidecar(path), {
        "schema_version": 1,
        "height": volume.shape[0],
        "width": volume.shape[1],
        "channels": volume.shape[2],
    })


def read_raw_volume(path) -> np.ndarray:
    sidecar = _sidecar(path)
    if not sidecar.is_file():
        raise FormatError(f"{path}: missing sidecar {sidecar}")
    meta = read_json(sidecar)
    try:
        h, w, c = int(meta["height"]), int(meta["width"]), int(meta["channels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{sidecar}: needs integer height/width/channels") from exc
    with open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) != h * w * c * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {h * w * c * 4}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float64)


def _kernel_from_channels(channels: int) -> tuple[int, bool]:
    """Map a channel count to (kernel size, has self channel)."""
    for k in (3, 5, 7):
        if channels == k * k:
            return k, True
        if channels == k * k - 1:
            return k, False
    raise FormatError(f"cannot infer kernel size from {channels} channels")


def read_affinity(path) -> AffinityField:
    """Load an affinity volume and normalize it.

    Volumes may carry either the raw neighbor weights (k*k-1 channels) or
    a previously written field (k*k channels, self weight first); both go
    through the same normalization, which is idempotent for the latter.
    """
    volume = read_raw_volume(path)
    kernel, has_self = _kernel_from_channels(volume.shape[2])
    neighbors = volume[:, :, 1:] if has_self else volume
    return AffinityField.from_neighbors(kernel, neighbors)


def write_affinity(path, affinity: AffinityField) -> None:
    volume = np.concatenate(
        [affinity.self_weight[:, :, None], affinity.neighbor_weights], axis=2
    )
    write_raw_volume(path, volume)


def sha256_file(path) -> str:
    import hashlib

    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
