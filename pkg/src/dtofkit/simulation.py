"""Synthesize realistic dToF sparse depth from ground-truth depth and RGB.

The pipeline samples one candidate point per sensor cell over the
sensor's coverage region, then degrades the candidates in stages:

1. flat cell-level signal loss (power-limited sensors),
2. non-Lambertian surfaces (dropouts or far returns),
3. low-reflectivity pixels (HSV brightness below a threshold),
4. long-distance loss ramping up to the detection limit,
5. random blank and noise points,
6. a shared background shift emulating calibration error.

Randomness comes from counter-based Philox streams keyed by
(seed, frame id, stage), so stages draw independently and frames can be
processed in any order with bit-identical results.

Points between stages are (N, 3) float64 arrays with columns
(row, col, depth_m); rows and columns hold integral pixel positions.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DepthMap, FovRegion, SparseDepth, round_half_up
from .errors import ValidationError

CONFIG_SCHEMA_VERSION = 1

STAGE_SAMPLE = "sample"
STAGE_BASE_LOSS = "base_loss"
STAGE_NON_LAMBERTIAN = "non_lambertian"
STAGE_LOW_REFLECTIVITY = "low_reflectivity"
STAGE_LONG_DISTANCE = "long_distance"
STAGE_RANDOM_ANOMALIES = "random_anomalies"
STAGE_CALIBRATION_SHIFT = "calibration_shift"

STAGE_ORDER = (
    STAGE_SAMPLE,
    STAGE_BASE_LOSS,
    STAGE_NON_LAMBERTIAN,
    STAGE_LOW_REFLECTIVITY,
    STAGE_LONG_DISTANCE,
    STAGE_RANDOM_ANOMALIES,
    STAGE_CALIBRATION_SHIFT,
)
_STAGE_IDS = {name: i for i, name in enumerate(STAGE_ORDER)}


def stage_rng(seed: int, frame_id: int, stage: str) -> np.random.Generator:
    """Philox stream keyed by (seed, frame, stage)."""
    if seed < 0 or frame_id < 0:
        raise ValidationError("seed and frame id must be non-negative")
    key = np.random.SeedSequence((seed, frame_id, _STAGE_IDS[stage]))
    return np.random.Generator(np.random.Philox(key))


def _probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class SimConfig:
    """Complete parameterization of the simulation for one sensor profile.

    ``grid_rows``/``grid_cols`` give the sensor resolution; cell centers
    are spread uniformly over ``fov`` and each cell samples the ground
    truth at a jittered offset within its iFoV footprint. ``pad_to``
    optionally grows the frame (edge replication, bottom/right) before
    simulation.
    """

    fov: FovRegion
    grid_rows: int
    grid_cols: int
    detection_max: float
    reliable_max: float
    loss_prob_base: float = 0.0
    low_reflect_v_threshold: float = 40.0
    low_reflect_loss_prob: float = 0.0
    nl_loss_prob: float = 0.5
    nl_farther_prob: float = 0.5
    nl_far_factor_range: tuple[float, float] = (1.2, 2.0)
    noise_frac: float = 0.05
    blank_frac: float = 0.05
    calib_shift_max: float = 0.0
    background_percentile: float = 60.0
    jitter_rotation_max: float = 15.0
    pad_to: tuple[int, int] | None = None

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValidationError("grid dimensions must be at least 1x1")
        if self.detection_max <= 0:
            raise ValidationError("detection_max must be positive")
        if self.reliable_max > self.detection_max:
            raise ValidationError("reliable_max cannot exceed detection_max")
        for name in (
            "loss_prob_base",
            "low_reflect_loss_prob",
            "nl_loss_prob",
            "nl_farther_prob",
            "noise_frac",
            "blank_frac",
        ):
            _probability(name, getattr(self, name))
        if self.noise_frac + self.blank_frac > 1.0:
            raise ValidationError("noise_frac + blank_frac cannot exceed 1")
        lo, hi = self.nl_far_factor_range
        if lo <= 0 or hi < lo:
            raise ValidationError("nl_far_factor_range must satisfy 0 < min <= max")
        if self.calib_shift_max < 0:
            raise ValidationError("calib_shift_max must be non-negative")
        if not 0.0 <= self.background_percentile <= 100.0:
            raise ValidationError("background_percentile must lie in [0, 100]")
        if self.jitter_rotation_max < 0:
            raise ValidationError("jitter_rotation_max must be non-negative")
        if self.pad_to is not None:
            h, w = self.pad_to
            if h < 1 or w < 1:
                raise ValidationError("pad_to dimensions must be positive")
            object.__setattr__(self, "pad_to", (int(h), int(w)))
        object.__setattr__(self, "nl_far_factor_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "fov": {
                "h_u": self.fov.h_u,
                "h_l": self.fov.h_l,
                "w_l": self.fov.w_l,
                "w_r": self.fov.w_r,
                "ifov_h": self.fov.ifov_h,
                "ifov_w": self.fov.ifov_w,
            },
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "detection_max": self.detection_max,
            "reliable_max": self.reliable_max,
            "loss_prob_base": self.loss_prob_base,
            "low_reflect_v_threshold": self.low_reflect_v_threshold,
            "low_reflect_loss_prob": self.low_reflect_loss_prob,
            "nl_loss_prob": self.nl_loss_prob,
            "nl_farther_prob": self.nl_farther_prob,
            "nl_far_factor_range": list(self.nl_far_factor_range),
            "noise_frac": self.noise_frac,
            "blank_frac": self.blank_frac,
            "calib_shift_max": self.calib_shift_max,
            "background_percentile": self.background_percentile,
            "jitter_rotation_max": self.jitter_rotation_max,
            "pad_to": list(self.pad_to) if self.pad_to else None,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        data = dict(raw)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValidationError(f"unsupported config schema version {version}")
        data.pop("name", None)
        try:
            fov = FovRegion(**data.pop("fov"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad fov block in config: {exc}") from exc
        if "nl_far_factor_range" in data:
            data["nl_far_factor_range"] = tuple(data["nl_far_factor_range"])
        if data.get("pad_to") is not None:
            data["pad_to"] = tuple(data["pad_to"])
        try:
            return cls(fov=fov, **data)
        except TypeError as exc:
            raise ValidationError(f"bad config field: {exc}") from exc


def builtin_profiles() -> dict[str, SimConfig]:
    """Named sensor presets: an 8x8 low-power module on 480x640 frames
    and a 40x30 phone sensor on frames padded to 928x714."""
    zju = SimConfig(
        fov=FovRegion(h_u=-25, h_l=405, w_l=85, w_r=535, ifov_h=52, ifov_w=56),
        grid_rows=8,
        grid_cols=8,
        detection_max=4.1,
        reliable_max=4.1,
        loss_prob_base=0.30,
        low_reflect_loss_prob=0.0,
        calib_shift_max=0.0,
    )
    phone = SimConfig(
        fov=FovRegion(h_u=30, h_l=900, w_l=40, w_r=660, ifov_h=21, ifov_w=21),
        grid_rows=40,
        grid_cols=30,
        detection_max=8.1,
        reliable_max=6.0,
        loss_prob_base=0.0,
        low_reflect_v_threshold=40,
        low_reflect_loss_prob=0.80,
        calib_shift_max=2.0,
        pad_to=(928, 714),
    )
    return {"zju-l5": zju, "phone": phone}


def load_profile(name: str) -> SimConfig:
    """Resolve a profile name: a JSON file in $DTOFKIT_PROFILE_DIR wins
    over the built-in presets."""
    profile_dir = os.environ.get("DTOFKIT_PROFILE_DIR")
    if profile_dir:
        candidate = Path(profile_dir) / f"{name}.json"
        if candidate.is_file():
            with open(candidate, "r", encoding="utf-8") as fh:
                return SimConfig.from_dict(json.load(fh))
    profiles = builtin_profiles()
    if name not in profiles:
        raise ValidationError(f"unknown profile {name!r}; built-ins are {sorted(profiles)}")
    return profiles[name]


@dataclass
class StageStats:
    points_in: int = 0
    dropped: int = 0
    modified: int = 0


@dataclass
class SimStats:
    """Per-stage accounting for one simulated frame."""

    frame_id: int
    seed: int
    grid_cells: int
    candidates: int
    stages: dict[str, StageStats] = field(default_factory=dict)
    output_points: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "frame_id": self.frame_id,
            "seed": self.seed,
            "grid_cells": self.grid_cells,
            "candidates": self.candidates,
            "stages": {
                name: {
                    "points_in": st.points_in,
                    "dropped": st.dropped,
                    "modified": st.modified,
                }
                for name, st in self.stages.items()
            },
            "output_points": self.output_points,
        }


def _empty_points() -> np.ndarray:
    return np.empty((0, 3), dtype=np.float64)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return _empty_points()
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError("points must be an (N, 3) array of (row, col, depth)")
    return pts


def preprocess_hypersim(gt: DepthMap) -> DepthMap:
    """Halve every valid depth when 60% or more of them exceed 6 meters."""
    values = gt.valid_values()
    if values.size == 0 or np.mean(values > 6.0) < 0.6:
        return gt
    data = gt.data.copy()
    data[gt.valid] *= 0.5
    return DepthMap(width=gt.width, height=gt.height, data=data, valid=gt.valid.copy())


def sample_grid_points(gt: DepthMap, cfg: SimConfig, seed: int, frame_id: int = 0) -> np.ndarray:
    """One candidate per sensor cell, uniformly spread over the coverage
    region, each sampling the ground truth at a rotated in-window offset.

    Cells whose sampled pixel (or center pixel) is invalid or outside the
    image yield no candidate. Candidate positions are the rounded cell
    centers; only the depth comes from the jittered pixel.
    """
    rng = stage_rng(seed, frame_id, STAGE_SAMPLE)
    fov = cfg.fov
    n = cfg.grid_rows * cfg.grid_cols
    pitch_h = (fov.h_l - fov.h_u) / cfg.grid_rows
    pitch_w = (fov.w_r - fov.w_l) / cfg.grid_cols
    center_r = np.repeat(fov.h_u + (np.arange(cfg.grid_rows) + 0.5) * pitch_h, cfg.grid_cols)
    center_c = np.tile(fov.w_l + (np.arange(cfg.grid_cols) + 0.5) * pitch_w, cfg.grid_rows)

    # jitter window spans the iFoV minus the center pixel so a 1x1 iFoV is exact
    half_h = (fov.ifov_h - 1.0) / 2.0
    half_w = (fov.ifov_w - 1.0) / 2.0
    dr = rng.uniform(-half_h, half_h, n)
    dc = rng.uniform(-half_w, half_w, n)
    theta = np.deg2rad(rng.uniform(-cfg.jitter_rotation_max, cfg.jitter_rotation_max, n))
    dr_rot = dr * np.cos(theta) - dc * np.sin(theta)
    dc_rot = dr * np.sin(theta) + dc * np.cos(theta)

    pos_r = round_half_up(center_r).astype(np.int64)
    pos_c = round_half_up(center_c).astype(np.int64)
    samp_r = round_half_up(center_r + dr_rot).astype(np.int64)
    samp_c = round_half_up(center_c + dc_rot).astype(np.int64)

    inside = (
        (pos_r >= 0) & (pos_r < gt.height) & (pos_c >= 0) & (pos_c < gt.width)
        & (samp_r >= 0) & (samp_r < gt.height) & (samp_c >= 0) & (samp_c < gt.width)
    )
    keep = inside.copy()
    keep[inside] = gt.valid[samp_r[inside], samp_c[inside]]
    if not keep.any():
        return _empty_points()
    depths = gt.data[samp_r[keep], samp_c[keep]]
    return np.stack(
        [pos_r[keep].astype(np.float64), pos_c[keep].astype(np.float64), depths], axis=1
    )


def _base_loss(pts, cfg, seed, frame_id):
    if pts.shape[0] == 0 or cfg.loss_prob_base == 0.0:
        return pts.copy(), 0, 0
    rng = stage_rng(seed, frame_id, STAGE_BASE_LOSS)
    drop = rng.random(pts.shape[0]) < cfg.loss_prob_base
    return pts[~drop], int(drop.sum()), 0


def apply_base_loss(points, cfg: SimConfig, seed: int, frame_id: int = 0) -> np.ndarray:
    """Flat cell-level signal loss at probability loss_prob_base."""
    return _base_loss(_as_points(points), cfg, seed, frame_id)[0]


def _non_lambertian(pts, materials, cfg, seed, frame_id):
    if materials is None or pts.shape[0] == 0:
        return pts.copy(), 0, 0
    materials = np.asarray(materials, dtype=np.float64)
    if np.any(materials < 0) or np.any(materials > 1):
        raise ValidationError("material probabilities must lie in [0, 1]")
    rows = pts[:, 0].astype(np.int64)
    cols = pts[:, 1].astype(np.int64)
    if rows.max() >= materials.shape[0] or cols.max() >= materials.shape[1]:
        raise ValidationError("material map resolution does not match point positions")
    rng = stage_rng(seed, frame_id, STAGE_NON_LAMBERTIAN)
    n = pts.shape[0]
    u_affect = rng.random(n)
    u_loss = rng.random(n)
    u_far = rng.random(n)
    factors = rng.uniform(cfg.nl_far_factor_range[0], cfg.nl_far_factor_range[1], n)

    affected = u_affect < materials[rows, cols]
    dropped = affected & (u_loss < cfg.nl_loss_prob)
    farther = affected & ~dropped & (u_far < cfg.nl_farther_prob)

    out = pts.copy()
    out[farther, 2] = np.minimum(out[farther, 2] * factors[farther], cfg.detection_max)
    return out[~dropped], int(dropped.sum()), int(farther.sum())


def apply_non_lambertian(
    points, materials, cfg: SimConfig, seed: int, frame_id: int = 0
) -> np.ndarray:
    """Dropouts and far returns on surfaces photons can pass through.

    ``materials`` holds per-pixel affect probabilities in [0, 1] (None
    disables the stage). An affected point is dropped with nl_loss_prob;
    otherwise, with nl_farther_prob, its depth is stretched by a factor
    drawn from nl_far_factor_range and capped at the detection limit.
    """
    return _non_lambertian(_as_points(points), materials, cfg, seed, frame_id)[0]


def _low_reflectivity(pts, rgb, cfg, seed, frame_id):
    if pts.shape[0] == 0 or cfg.low_reflect_loss_prob == 0.0:
        return pts.copy(), 0, 0
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError("rgb must be an (H, W, 3) array")
    rows = pts[:, 0].astype(np.int64)
    cols = pts[:, 1].astype(np.int64)
    if rows.max() >= rgb.shape[0] or cols.max() >= rgb.shape[1]:
        raise ValidationError("rgb resolution does not match point positions")
    v_channel = rgb.max(axis=2).astype(np.float64)
    rng = stage_rng(seed, frame_id, STAGE_LOW_REFLECTIVITY)
    u = rng.random(pts.shape[0])
    dark = v_channel[rows, cols] < cfg.low_reflect_v_threshold
    drop = dark & (u < cfg.low_reflect_loss_prob)
    return pts[~drop], int(drop.sum()), 0


def apply_low_reflectivity(points, rgb, cfg: SimConfig, seed: int, frame_id: int = 0) -> np.ndarray:
    """Drop points on dark pixels: HSV V channel (max of R, G, B on the
    0..255 scale) below the threshold loses the point with the configured
    probability."""
    return _low_reflectivity(_as_points(points), rgb, cfg, seed, frame_id)[0]


def _long_distance(pts, cfg, seed, frame_id):
    if pts.shape[0] == 0:
        return pts.copy(), 0, 0
    rng = stage_rng(seed, frame_id, STAGE_LONG_DISTANCE)
    u = rng.random(pts.shape[0])
    d = pts[:, 2]
    prob = np.zeros_like(d)
    if cfg.detection_max > cfg.reliable_max:
        in_ramp = (d > cfg.reliable_max) & (d <= cfg.detection_max)
        prob[in_ramp] = (d[in_ramp] - cfg.reliable_max) / (cfg.detection_max - cfg.reliable_max)
    drop = (d > cfg.detection_max) | (u < prob)
    return pts[~drop], int(drop.sum()), 0


def apply_long_distance(points, cfg: SimConfig, seed: int, frame_id: int = 0) -> np.ndarray:
    """Distance-dependent loss: always beyond the detection limit, and
    ramping linearly from never at reliable_max to always at the limit."""
    return _long_distance(_as_points(points), cfg, seed, frame_id)[0]


def _random_anomalies(pts, cfg, seed, frame_id):
    if pts.shape[0] == 0 or (cfg.blank_frac == 0.0 and cfg.noise_frac == 0.0):
        return pts.copy(), 0, 0
    rng = stage_rng(seed, frame_id, STAGE_RANDOM_ANOMALIES)
    n = pts.shape[0]
    u = rng.random(n)
    noise_depths = cfg.detection_max * (1.0 - rng.random(n))
    blank = u < cfg.blank_frac
    noise = ~blank & (u < cfg.blank_frac + cfg.noise_frac)
    out = pts.copy()
    out[noise, 2] = noise_depths[noise]
    return out[~blank], int(blank.sum()), int(noise.sum())


def apply_random_anomalies(points, cfg: SimConfig, seed: int, frame_id: int = 0) -> np.ndarray:
    """Remove a blank_frac share of points and re-assign a noise_frac
    share uniform random depths within (0, detection_max]."""
    return _random_anomalies(_as_points(points), cfg, seed, frame_id)[0]


def _calibration_shift(pts, gt, cfg, seed, frame_id):
    if pts.shape[0] == 0 or cfg.calib_shift_max == 0.0:
        return pts.copy(), 0, 0
    values = gt.valid_values()
    if values.size == 0:
        return pts.copy(), 0, 0
    threshold = np.percentile(values, cfg.background_percentile)
    rng = stage_rng(seed, frame_id, STAGE_CALIBRATION_SHIFT)
    magnitude = rng.uniform(0.0, cfg.calib_shift_max)
    direction = rng.uniform(0.0, 2.0 * np.pi)
    d_row = magnitude * np.sin(direction) * cfg.fov.ifov_h
    d_col = magnitude * np.cos(direction) * cfg.fov.ifov_w

    out = pts.copy()
    background = out[:, 2] > threshold
    out[background, 0] = round_half_up(out[background, 0] + d_row)
    out[background, 1] = round_half_up(out[background, 1] + d_col)
    inside = (
        (out[:, 0] >= 0) & (out[:, 0] < gt.height)
        & (out[:, 1] >= 0) & (out[:, 1] < gt.width)
    )
    moved = int((background & inside).sum())
    return out[inside], int((~inside).sum()), moved


def apply_calibration_shift(
    points, gt: DepthMap, cfg: SimConfig, seed: int, frame_id: int = 0
) -> np.ndarray:
    """Shift background points by one shared random offset per frame.

    The background threshold is a percentile of the valid ground-truth
    depths; the offset magnitude is uniform in [0, calib_shift_max]
    sensor pixels, converted to image pixels through the iFoV size.
    Shifted points leaving the image are dropped.
    """
    return _calibration_shift(_as_points(points), gt, cfg, seed, frame_id)[0]


def pad_frame(arr: np.ndarray, pad_to: tuple[int, int]) -> np.ndarray:
    """Grow the first two axes to pad_to by replicating the last row/column."""
    h, w = pad_to
    if arr.shape[0] > h or arr.shape[1] > w:
        raise ValidationError(f"cannot pad {arr.shape[0]}x{arr.shape[1]} frame down to {h}x{w}")
    pad = [(0, h - arr.shape[0]), (0, w - arr.shape[1])] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="edge")


def simulate_dtof(
    gt: DepthMap,
    rgb,
    cfg: SimConfig,
    seed: int,
    materials=None,
    frame_id: int = 0,
) -> tuple[SparseDepth, SimStats]:
    """Run the full degradation pipeline on one frame.

    Args:
        gt: ground-truth depth at image resolution.
        rgb: (H, W, 3) image on the 0..255 scale, or None when the
            low-reflectivity stage is disabled.
        cfg: sensor profile.
        seed: base seed; with frame_id it keys every stage stream.
        materials: optional per-pixel non-Lambertian probability map.
        frame_id: frame index within a batch.

    Returns:
        The simulated sparse depth map (at the padded resolution when the
        profile pads) and per-stage statistics.
    """
    if rgb is None and cfg.low_reflect_loss_prob > 0:
        raise ValidationError("profile enables low-reflectivity loss but no RGB image was given")
    if rgb is not None:
        rgb = np.asarray(rgb)
        if rgb.shape[:2] != (gt.height, gt.width):
            raise ValidationError(
                f"rgb resolution {rgb.shape[:2]} does not match depth {(gt.height, gt.width)}"
            )
    if materials is not None:
        materials = np.asarray(materials, dtype=np.float64)
        if materials.shape != (gt.height, gt.width):
            raise ValidationError("material map resolution does not match depth")

    if cfg.pad_to is not None:
        data = pad_frame(gt.data, cfg.pad_to)
        valid = pad_frame(gt.valid, cfg.pad_to)
        gt = DepthMap(width=data.shape[1], height=data.shape[0], data=data, valid=valid)
        if rgb is not None:
            rgb = pad_frame(rgb, cfg.pad_to)
        if materials is not None:
            materials = pad_frame(materials, cfg.pad_to)

    stats = SimStats(
        frame_id=frame_id,
        seed=seed,
        grid_cells=cfg.grid_rows * cfg.grid_cols,
        candidates=0,
    )
    pts = sample_grid_points(gt, cfg, seed, frame_id)
    stats.candidates = pts.shape[0]

    pipeline = (
        (STAGE_BASE_LOSS, lambda p: _base_loss(p, cfg, seed, frame_id)),
        (STAGE_NON_LAMBERTIAN, lambda p: _non_lambertian(p, materials, cfg, seed, frame_id)),
        (STAGE_LOW_REFLECTIVITY, lambda p: _low_reflectivity(p, rgb, cfg, seed, frame_id)
            if cfg.low_reflect_loss_prob > 0 else (p.copy(), 0, 0)),
        (STAGE_LONG_DISTANCE, lambda p: _long_distance(p, cfg, seed, frame_id)),
        (STAGE_RANDOM_ANOMALIES, lambda p: _random_anomalies(p, cfg, seed, frame_id)),
        (STAGE_CALIBRATION_SHIFT, lambda p: _calibration_shift(p, gt, cfg, seed, frame_id)),
    )
    for name, step in pipeline:
        points_in = pts.shape[0]
        pts, dropped, modified = step(pts)
        stats.stages[name] = StageStats(points_in=points_in, dropped=dropped, modified=modified)

    sparse = SparseDepth.from_points(gt.width, gt.height, pts)
    stats.output_points = len(sparse)
    return sparse, stats
