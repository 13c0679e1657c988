"""Non-learned numeric kernels for depth refinement.

Covers four pieces that take network outputs as plain arrays: combining
adaptive depth bins into metric depth, converting inverse depth to a
relative map, aligning inverse depth to sparse measurements by a least
squares scale/shift, and iterative local propagation under normalized
affinity kernels with multi-kernel, multi-checkpoint aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import DepthMap, SparseDepth, _freeze
from .errors import DegenerateFitError, ValidationError

NORMALIZATION_TOL = 1e-6
KERNEL_SIZES = (3, 5, 7)


@dataclass(frozen=True)
class DepthBins:
    """Normalized bin widths over a metric depth range."""

    widths: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        widths = np.asarray(self.widths, dtype=np.float64).reshape(-1)
        if widths.size == 0 or np.any(widths < 0):
            raise ValidationError("bin widths must be non-negative and non-empty")
        if abs(widths.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValidationError(f"bin widths sum to {widths.sum()}, expected 1")
        if not self.d_min < self.d_max:
            raise ValidationError("d_min must be smaller than d_max")
        object.__setattr__(self, "widths", _freeze(widths))

    @property
    def n(self) -> int:
        return int(self.widths.size)

    @classmethod
    def uniform(cls, n: int = 128, d_min: float = 0.0, d_max: float = 10.0) -> "DepthBins":
        return cls(np.full(n, 1.0 / n), d_min, d_max)


def bin_centers(bins: DepthBins) -> np.ndarray:
    """Center depth of every bin: d_min + span * (b_i/2 + sum of earlier widths)."""
    b = bins.widths
    leading = np.cumsum(b) - b
    return bins.d_min + (bins.d_max - bins.d_min) * (b / 2.0 + leading)


def bins_to_depth(bins: DepthBins, weights) -> np.ndarray:
    """Convex combination of bin centers under per-pixel weights.

    ``weights`` has the bin axis last; each pixel's weights must be
    non-negative and sum to 1 (tolerance 1e-6). Output lies in
    [first center, last center].
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != bins.n:
        raise ValidationError(f"weights have {w.shape[-1]} bins, expected {bins.n}")
    if np.any(w < 0):
        raise ValidationError("bin weights must be non-negative")
    sums = w.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
        raise ValidationError("bin weights must sum to 1 per pixel")
    return w @ bin_centers(bins)


def inverse_to_relative(d_inv, epsilon: float = 1e-6) -> np.ndarray:
    """Elementwise 1 / (d_inv + epsilon); re-expands far regions that
    inverse depth compresses toward zero."""
    d_inv = np.asarray(d_inv, dtype=np.float64)
    if np.any(d_inv < 0):
        raise ValidationError("inverse depth must be non-negative")
    return 1.0 / (d_inv + epsilon)


@dataclass
class ScaleShiftFit:
    """Result of aligning inverse depth to sparse measurements."""

    scale: float
    shift: float
    residual_rms: float
    n_points: int
    n_rejected: int
    aligned: DepthMap


def fit_scale_shift(
    d_inv,
    sparse: SparseDepth,
    robust: bool = False,
    floor: float = 1e-6,
) -> ScaleShiftFit:
    """Least-squares fit of scale s and shift t in inverse-depth space.

    Minimizes sum over sparse points of (s * d_inv(p) + t - 1/depth_p)^2,
    then returns the aligned metric map 1 / max(s * d_inv + t, floor).
    With ``robust`` a single pass drops points whose residual deviates
    from the median by more than twice the MAD before refitting.

    Raises DegenerateFitError for fewer than two points or when every
    sampled d_inv value is identical.
    """
    d_inv = np.asarray(d_inv, dtype=np.float64)
    if d_inv.shape != (sparse.height, sparse.width):
        raise ValidationError("inverse depth resolution does not match sparse map")
    x = d_inv[sparse.rows, sparse.cols]
    y = 1.0 / sparse.depths

    def solve(xs, ys):
        if xs.size < 2 or np.ptp(xs) == 0:
            raise DegenerateFitError(
                "scale/shift fit needs at least two points with distinct inverse depths"
            )
        a = np.stack([xs, np.ones_like(xs)], axis=1)
        (s, t), *_ = np.linalg.lstsq(a, ys, rcond=None)
        return float(s), float(t)

    s, t = solve(x, y)
    n_rejected = 0
    if robust:
        res = s * x + t - y
        mad = np.median(np.abs(res - np.median(res)))
        if mad > 0:
            keep = np.abs(res - np.median(res)) <= 2.0 * mad
            if keep.sum() >= 2 and np.ptp(x[keep]) > 0:
                n_rejected = int((~keep).sum())
                x, y = x[keep], y[keep]
                s, t = solve(x, y)
    residual_rms = float(np.sqrt(np.mean((s * x + t - y) ** 2)))
    aligned_data = 1.0 / np.maximum(s * d_inv + t, floor)
    aligned = DepthMap(
        width=sparse.width,
        height=sparse.height,
        data=aligned_data,
        valid=np.ones_like(aligned_data, dtype=bool),
    )
    return ScaleShiftFit(s, t, residual_rms, int(x.size), n_rejected, aligned)


def kernel_offsets(kernel_size: int) -> list[tuple[int, int]]:
    """Neighbor offsets of a k x k window in row-major order, center excluded."""
    r = kernel_size // 2
    return [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if (dy, dx) != (0, 0)
    ]


@dataclass(frozen=True)
class AffinityField:
    """Per-pixel propagation weights for one kernel size.

    ``self_weight`` is (H, W); ``neighbor_weights`` is (H, W, k*k-1) with
    channels ordered like :func:`kernel_offsets`. Construction checks the
    normalization |w_self| + sum |w_j| = 1 per pixel.
    """

    kernel_size: int
    self_weight: np.ndarray
    neighbor_weights: np.ndarray

    def __post_init__(self):
        if self.kernel_size not in KERNEL_SIZES:
            raise ValidationError(f"kernel size must be one of {KERNEL_SIZES}")
        sw = np.asarray(self.self_weight, dtype=np.float64)
        nw = np.asarray(self.neighbor_weights, dtype=np.float64)
        n_neighbors = self.kernel_size**2 - 1
        if sw.ndim != 2 or nw.shape != sw.shape + (n_neighbors,):
            raise ValidationError(
                f"expected self weights (H, W) and neighbor weights (H, W, {n_neighbors})"
            )
        total = np.abs(sw) + np.abs(nw).sum(axis=-1)
        if np.any(np.abs(total - 1.0) > NORMALIZATION_TOL):
            raise ValidationError("affinity weights must satisfy |self| + sum|neighbors| = 1")
        object.__setattr__(self, "self_weight", _freeze(sw))
        object.__setattr__(self, "neighbor_weights", _freeze(nw))

    @property
    def shape(self) -> tuple[int, int]:
        return self.self_weight.shape

    @property
    def offsets(self) -> list[tuple[int, int]]:
        return kernel_offsets(self.kernel_size)

    @classmethod
    def from_neighbors(cls, kernel_size: int, raw_neighbors) -> "AffinityField":
        """Normalize raw neighbor weights: scale so their absolute sum is
        at most 1, then set the self weight to the remaining mass."""
        raw = np.asarray(raw_neighbors, dtype=np.float64)
        abs_sum = np.abs(raw).sum(axis=-1)
        scale = np.maximum(abs_sum, 1.0)
        neighbors = raw / scale[..., None]
        self_weight = 1.0 - np.abs(neighbors).sum(axis=-1)
        return cls(kernel_size, self_weight, neighbors)

    @classmethod
    def identity(cls, kernel_size: int, height: int, width: int) -> "AffinityField":
        return cls(
            kernel_size,
            np.ones((height, width)),
            np.zeros((height, width, kernel_size**2 - 1)),
        )


def _shift_self_filled(field: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """field[i+dy, j+dx] where in bounds, else the pixel's own value (the
    out-of-image neighbor's mass falls back to the center)."""
    h, w = field.shape
    rows = np.arange(h) + dy
    cols = np.arange(w) + dx
    shifted = field[np.clip(rows, 0, h - 1)[:, None], np.clip(cols, 0, w - 1)[None, :]]
    inside = (((rows >= 0) & (rows < h))[:, None]) & (((cols >= 0) & (cols < w))[None, :])
    return np.where(inside, shifted, field)


def propagate_step(field, affinity: AffinityField) -> np.ndarray:
    """One synchronous propagation update of the whole field.

    Every pixel becomes its self-weighted value plus the weighted sum of
    its k x k neighborhood from the previous field (Jacobi ordering, no
    re-embedding of measured points).
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape != affinity.shape:
        raise ValidationError(
            f"field shape {field.shape} does not match affinity {affinity.shape}"
        )
    out = affinity.self_weight * field
    for channel, (dy, dx) in enumerate(affinity.offsets):
        out = out + affinity.neighbor_weights[:, :, channel] * _shift_self_filled(field, dy, dx)
    return out


@dataclass(frozen=True)
class AggregationWeights:
    """Mixing weights over iteration checkpoints and kernel sizes.

    ``tau`` weighs the checkpoints {0, T/2, T}; ``sigma`` weighs the
    kernels in ascending size order. Either may be per-image (1-D) or
    per-pixel (extra trailing H, W axes); each set must be non-negative
    and sum to 1.
    """

    tau: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        for name, arr, expected in (("tau", tau, 3), ("sigma", sigma, None)):
            if expected is not None and arr.shape[0] != expected:
                raise ValidationError(f"{name} must have {expected} entries")
            if np.any(arr < 0):
                raise ValidationError(f"{name} weights must be non-negative")
            if np.any(np.abs(arr.sum(axis=0) - 1.0) > NORMALIZATION_TOL):
                raise ValidationError(f"{name} weights must sum to 1")
        object.__setattr__(self, "tau", _freeze(tau))
        object.__setattr__(self, "sigma", _freeze(sigma))


def refine(
    initial,
    affinities: Mapping[int, AffinityField],
    agg: AggregationWeights,
    iterations: int = 6,
) -> np.ndarray:
    """Propagate the initial field under each kernel and blend checkpoints.

    Runs ``iterations`` steps per kernel (must be even and >= 2), keeps
    the fields at t in {0, T/2, T}, mixes the kernels with sigma at each
    checkpoint and the checkpoints with tau.
    """
    initial = np.asarray(initial, dtype=np.float64)
    if iterations < 2 or iterations % 2 != 0:
        raise ValidationError("iteration count must be even and at least 2")
    kernels = sorted(affinities)
    if agg.sigma.shape[0] != len(kernels):
        raise ValidationError(
            f"sigma has {agg.sigma.shape[0]} entries for {len(kernels)} kernels"
        )
    checkpoints = (0, iterations // 2, iterations)
    mixed = {t: np.zeros_like(initial) for t in checkpoints}
    for idx, k in enumerate(kernels):
        field = initial
        if affinities[k].shape != initial.shape:
            raise ValidationError("affinity resolution does not match the depth field")
        for t in range(iterations + 1):
            if t > 0:
                field = propagate_step(field, affinities[k])
            if t in checkpoints:
                mixed[t] = mixed[t] + agg.sigma[idx] * field
    out = np.zeros_like(initial)
    for ti, t in enumerate(checkpoints):
        out = out + agg.tau[ti] * mixed[t]
    return out
