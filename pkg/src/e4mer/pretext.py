"""Self-supervised sample generation and pretext losses.

Masked prediction zeroes out alternating geometric runs of each channel
(mean masked run 3 s, masked fraction 0.15) and scores reconstructions with
an RMSE over masked cells only.  Transformation prediction applies one of
six per-channel transformations (identity, noise, magnitude-warp,
permutation, time-warp, crop) drawn uniformly and scores per-channel
classification with a channel-averaged categorical cross-entropy.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ChannelTooShort, EmptyMask, LengthMismatch
from .ingest import MODEL_KINDS, ChannelKind


@dataclass
class MaskSpec:
    """Masking-run geometry: masked fraction r and mean masked length l_m (s)."""

    r: float = 0.15
    l_m: float = 3.0

    def __post_init__(self):
        if not (0.0 < self.r < 1.0):
            raise ValueError(f"masking ratio must be in (0,1), got {self.r}")
        if self.l_m <= 0:
            raise ValueError(f"mean masked length must be > 0, got {self.l_m}")

    @property
    def l_u(self) -> float:
        """Mean unmasked run length (s) implied by r and l_m."""
        return self.l_m * (1.0 - self.r) / self.r


@dataclass
class TransformParams:
    """Knobs for the six channel transformations (indices = labels)."""

    noise_sigma: float = 0.05
    warp_knots: int = 4
    magnitude_sigma: float = 0.2
    time_sigma: float = 0.2
    permute_pieces: int = 4
    crop_ratio: float = 0.5


N_TRANSFORMS = 6

TRANSFORM_NAMES = (
    "identity",
    "add_noise",
    "magnitude_warp",
    "permute",
    "time_warp",
    "crop",
)


@dataclass
class PretextSample:
    """A segment prepared for one pretext task."""

    variant: str  # "Masked" | "Transformed"
    inputs: Dict[ChannelKind, np.ndarray]
    masks: Optional[Dict[ChannelKind, np.ndarray]] = None
    targets: Optional[Dict[ChannelKind, np.ndarray]] = None
    transform_labels: Optional[Dict[ChannelKind, int]] = None


def sample_mask(
    n_samples: int, rate_hz: float, spec: MaskSpec, rng: np.random.Generator
) -> np.ndarray:
    """Boolean vector of alternating masked/unmasked geometric runs.

    Run lengths (in samples) are Geometric on {1, 2, ...} with means
    l_m * rate and l_u * rate (p = 1/mean); the first run is masked with
    probability r, and the sequence is truncated at `n_samples`.
    """
    if n_samples <= 0:
        raise ValueError("mask length must be positive")
    p_m = min(1.0, 1.0 / (spec.l_m * rate_hz))
    p_u = min(1.0, 1.0 / (spec.l_u * rate_hz))
    masked_now = bool(rng.random() < spec.r)

    pieces = []
    total = 0
    mean_pair = spec.l_m * rate_hz + spec.l_u * rate_hz
    while total < n_samples:
        draw = max(16, int(2 * (n_samples - total) / mean_pair) + 2)
        m_runs = rng.geometric(p_m, size=draw)
        u_runs = rng.geometric(p_u, size=draw)
        if masked_now:
            lengths = np.stack([m_runs, u_runs], axis=1).reshape(-1)
            states = np.tile([True, False], draw)
        else:
            lengths = np.stack([u_runs, m_runs], axis=1).reshape(-1)
            states = np.tile([False, True], draw)
        pieces.append(np.repeat(states, lengths))
        total += int(lengths.sum())
        masked_now = bool(states[-1]) ^ True
    return np.concatenate(pieces)[:n_samples]


def sample_segment_masks(
    channels: Dict[ChannelKind, np.ndarray],
    rates: Dict[ChannelKind, float],
    spec: MaskSpec,
    rng: np.random.Generator,
) -> Dict[ChannelKind, np.ndarray]:
    """One independent mask per model channel, at that channel's rate."""
    return {
        kind: sample_mask(channels[kind].shape[0], rates[kind], spec, rng)
        for kind in MODEL_KINDS
    }


def apply_mask(
    channels: Dict[ChannelKind, np.ndarray], masks: Dict[ChannelKind, np.ndarray]
) -> Dict[ChannelKind, np.ndarray]:
    """Zero every masked position (mask True = masked)."""
    out = {}
    for kind, values in channels.items():
        mask = masks[kind]
        if mask.shape[0] != values.shape[0]:
            raise LengthMismatch(
                f"{kind}: mask length {mask.shape[0]} != channel length {values.shape[0]}"
            )
        out[kind] = np.where(mask, 0.0, values)
    return out


def rmse_loss(
    pred: Dict[ChannelKind, np.ndarray],
    target: Dict[ChannelKind, np.ndarray],
    masks: Dict[ChannelKind, np.ndarray],
) -> float:
    """Root-mean-square error over masked cells only, pooled across channels."""
    total = 0.0
    count = 0
    for kind, mask in masks.items():
        if mask.shape[0] != target[kind].shape[0]:
            raise LengthMismatch(f"{kind}: mask/target length mismatch")
        diff = pred[kind][mask] - target[kind][mask]
        total += float((diff * diff).sum())
        count += int(mask.sum())
    if count == 0:
        raise EmptyMask("no masked cells to score")
    return float(np.sqrt(total / count))


def multitask_cce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Channel-averaged categorical cross-entropy.

    `logits` has shape (C, K) with one K-way score row per channel and
    `labels` shape (C,).  Returns (1/C) * sum_c -log softmax(logits_c)[label_c].
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise LengthMismatch("logits must be (channels, classes) with one label per channel")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(logits.shape[0]), labels]
    return float(np.mean(logz - picked))


# --- the six channel transformations ---------------------------------------


def _check_length(x: np.ndarray, minimum: int, what: str) -> None:
    if x.shape[0] < minimum:
        raise ChannelTooShort(f"{what} needs >= {minimum} samples, got {x.shape[0]}")


def transform_identity(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    _check_length(x, 1, "identity")
    return x.copy()


def transform_add_noise(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    _check_length(x, 1, "add_noise")
    if params.noise_sigma == 0.0:
        return x.copy()
    return x + rng.normal(0.0, params.noise_sigma, size=x.shape[0])


def transform_magnitude_warp(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    """Multiply by a smooth curve through equispaced knots ~ N(1, sigma^2)."""
    k = params.warp_knots
    _check_length(x, k, "magnitude_warp")
    n = x.shape[0]
    knot_pos = np.linspace(0.0, n - 1.0, k)
    knot_val = rng.normal(1.0, params.magnitude_sigma, size=k)
    curve = CubicSpline(knot_pos, knot_val)(np.arange(n))
    return x * curve


def transform_permute(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    """Split into near-equal pieces and shuffle their order."""
    n_pieces = params.permute_pieces
    _check_length(x, n_pieces, "permute")
    if n_pieces == 1:
        return x.copy()
    pieces = np.array_split(np.arange(x.shape[0]), n_pieces)
    order = rng.permutation(n_pieces)
    return x[np.concatenate([pieces[i] for i in order])]


def transform_time_warp(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    """Distort the time axis with a smooth speed curve, resample to length."""
    k = params.warp_knots
    _check_length(x, max(k, 2), "time_warp")
    n = x.shape[0]
    knot_pos = np.linspace(0.0, n - 1.0, k)
    knot_val = 1.0 + rng.normal(0.0, params.time_sigma, size=k)
    speeds = CubicSpline(knot_pos, knot_val)(np.arange(n))
    speeds = np.clip(speeds, 0.05, None)  # keep the time map strictly increasing
    cumulative = np.cumsum(speeds)
    warped_t = (cumulative - cumulative[0]) * ((n - 1.0) / (cumulative[-1] - cumulative[0]))
    return np.interp(np.arange(n), warped_t, x)


def transform_crop(x: np.ndarray, rng: np.random.Generator, params: TransformParams) -> np.ndarray:
    """Keep a random contiguous fraction, linearly stretched back to length."""
    n = x.shape[0]
    keep = max(2, int(round(n * params.crop_ratio)))
    _check_length(x, keep, "crop")
    start = int(rng.integers(0, n - keep + 1))
    piece = x[start : start + keep]
    return np.interp(np.linspace(0.0, keep - 1.0, n), np.arange(keep), piece)


TRANSFORMS = (
    transform_identity,
    transform_add_noise,
    transform_magnitude_warp,
    transform_permute,
    transform_time_warp,
    transform_crop,
)


def sample_transform(
    channels: Dict[ChannelKind, np.ndarray],
    rng: np.random.Generator,
    params: TransformParams = TransformParams(),
) -> PretextSample:
    """Apply an independently drawn transform to each model channel."""
    inputs: Dict[ChannelKind, np.ndarray] = {}
    labels: Dict[ChannelKind, int] = {}
    for kind in MODEL_KINDS:
        idx = int(rng.integers(0, N_TRANSFORMS))
        inputs[kind] = TRANSFORMS[idx](channels[kind], rng, params)
        labels[kind] = idx
    return PretextSample(variant="Transformed", inputs=inputs, transform_labels=labels)


def make_masked_sample(
    channels: Dict[ChannelKind, np.ndarray],
    rates: Dict[ChannelKind, float],
    spec: MaskSpec,
    rng: np.random.Generator,
) -> PretextSample:
    masks = sample_segment_masks(channels, rates, spec, rng)
    return PretextSample(
        variant="Masked",
        inputs=apply_mask(channels, masks),
        masks=masks,
        targets={k: channels[k].copy() for k in MODEL_KINDS},
    )


def segment_rng(global_seed: int, epoch: int, segment_id: str) -> np.random.Generator:
    """Reproducible per-(seed, epoch, segment) RNG stream."""
    return np.random.default_rng([global_seed, epoch, zlib.crc32(segment_id.encode())])
