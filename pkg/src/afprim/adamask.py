"""Adaptive-mask inpainting loop over abstract denoiser, decoder and segmenter callables.

Timestep convention: steps run t = T, T-1, ..., 1. ``alpha_bar[t-1]`` holds the
cumulative signal level used at step t and ``alpha_bar(0) = 1`` (clean data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Set

import numpy as np
from scipy import ndimage

from .geom import Mask

Array = np.ndarray

# (lower bound of t on the 50-step scale, repeats), checked top-down
DILATION_TABLE = ((45, 20), (40, 10), (35, 5), (30, 4), (25, 3), (20, 2), (15, 1), (0, 0))
REFERENCE_STEPS = 50


class ScheduleError(ValueError):
    pass


class InpaintingError(RuntimeError):
    def __init__(self, t: int, cause: Exception):
        super().__init__(f"interface failure at t={t}: {cause}")
        self.t = t


class Denoiser(Protocol):
    def __call__(self, x_t: Array, condition, mask: Mask, original: Array, t: int) -> Array: ...


class Segmenter(Protocol):
    def __call__(self, image: Array) -> Optional[Mask]: ...


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha_bar: Array

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64).reshape(-1)
        if len(ab) == 0:
            raise ScheduleError("empty schedule")
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ScheduleError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing in t")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return len(self.alpha_bar)

    def at(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t - 1])

    @classmethod
    def linear(cls, T: int, start: float = 0.9999, end: float = 0.01) -> "DiffusionSchedule":
        if T == 1:
            return cls(np.array([start]))
        return cls(np.linspace(start, end, T))


@dataclass
class AdaptiveMaskState:
    t: int
    latent: Array
    mask: Mask
    default_mask: Mask


@dataclass
class InpaintingResult:
    image: Array
    masks: List[Mask] = field(default_factory=list)  # masks[k] used at step T - k
    adapted: List[int] = field(default_factory=list)  # steps whose segmentation replaced the mask


def predict_x0(x_t: Array, eps: Array, t: int, schedule: DiffusionSchedule) -> Array:
    ab = schedule.at(t)
    return (np.asarray(x_t) - math.sqrt(1.0 - ab) * np.asarray(eps)) / math.sqrt(ab)


def ddim_step(x_t: Array, x0_hat: Array, t: int, schedule: DiffusionSchedule) -> Array:
    if t < 1:
        raise ScheduleError("ddim_step needs t >= 1")
    if t == 1:
        return np.array(x0_hat, dtype=np.float64, copy=True)
    ab_t, ab_prev = schedule.at(t), schedule.at(t - 1)
    x_t = np.asarray(x_t, dtype=np.float64)
    if ab_t >= 1.0:
        eps_hat = np.zeros_like(x_t)
    else:
        eps_hat = (x_t - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def q_sample(x0: Array, t: int, schedule: DiffusionSchedule, noise: Array) -> Array:
    ab = schedule.at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def dilate(mask: Mask, repeats: int) -> Mask:
    if repeats < 0:
        raise ValueError("repeats must be >= 0")
    if repeats == 0:
        return Mask(mask.width, mask.height, mask.bits.copy())
    bits = ndimage.binary_dilation(mask.bits, structure=np.ones((3, 3), dtype=bool),
                                   iterations=repeats)
    return Mask(mask.width, mask.height, bits)


def _to_reference(t: int, total_steps: int) -> int:
    return math.floor(t * REFERENCE_STEPS / total_steps)


def dilation_repeats(t: int, total_steps: int = REFERENCE_STEPS, table=DILATION_TABLE) -> int:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    t = min(max(int(t), 0), total_steps - 1)
    ref = _to_reference(t, total_steps)
    for lo, reps in table:
        if ref >= lo:
            return reps
    return 0


def default_provoke_schedule(total_steps: int = REFERENCE_STEPS) -> Set[int]:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    base = {t for t in range(2, 41, 2)} | {45}
    if total_steps == REFERENCE_STEPS:
        return base
    return {min(total_steps, max(1, round(s * total_steps / REFERENCE_STEPS))) for s in base}


def run_adaptive_inpainting(denoiser: Callable, decoder: Callable, segmenter: Callable,
                            schedule: DiffusionSchedule, default_mask: Mask, original_image: Array,
                            condition=None, provoke_schedule: Optional[Sequence[int]] = None,
                            seed: int = 0, x_T: Optional[Array] = None,
                            dilation_table=DILATION_TABLE) -> InpaintingResult:
    """Masked DDIM sampling with segmentation-driven mask updates.

    At every step, pixels outside the current mask are replaced by the forward-noised
    original, so the region never covered by any mask tracks the original image.
    At provoke steps the decoded prediction is segmented; a nonempty segmentation
    dilated by the scheduled amount becomes the next mask, an empty one restores the
    default.
    """
    if default_mask.area == 0:
        raise ValueError("default mask is empty")
    original = np.asarray(original_image, dtype=np.float64)
    if original.shape[:2] != default_mask.bits.shape:
        raise ValueError("mask and image dimensions differ")
    T = schedule.T
    provoke = default_provoke_schedule(T) if provoke_schedule is None else set(provoke_schedule)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(original.shape) if x_T is None else np.array(x_T, dtype=np.float64)
    expand = (lambda b: b[..., None]) if original.ndim == 3 else (lambda b: b)
    m = default_mask
    result = InpaintingResult(image=original)
    for t in range(T, 0, -1):
        result.masks.append(m)
        mb = expand(m.bits)
        x = np.where(mb, x, q_sample(original, t, schedule, rng.standard_normal(original.shape)))
        try:
            eps = np.asarray(denoiser(x, condition, m, original, t), dtype=np.float64)
            if eps.shape != x.shape:
                raise ValueError(f"denoiser returned shape {eps.shape}, expected {x.shape}")
            x0_hat = predict_x0(x, eps, t, schedule)
            if t in provoke:
                seg = segmenter(decoder(x0_hat))
                if seg is not None and seg.area > 0:
                    m_next = dilate(seg, dilation_repeats(t, T, dilation_table))
                    result.adapted.append(t)
                else:
                    m_next = default_mask
            else:
                m_next = m
        except Exception as exc:  # interface failure
            raise InpaintingError(t, exc) from exc
        x = ddim_step(x, x0_hat, t, schedule)
        m = m_next
    x = np.where(expand(m.bits), x, original)
    result.image = decoder(x)
    return result


# --------------------------------------------------------------------------
# toy components used for testing and the synthetic evaluation
# --------------------------------------------------------------------------


def identity_decoder(x: Array) -> Array:
    return x


def threshold_segmenter(level: float = 0.5) -> Callable[[Array], Optional[Mask]]:
    def seg(image: Array) -> Optional[Mask]:
        bits = np.asarray(image) > level
        if bits.ndim == 3:
            bits = bits.any(axis=2)
        if not bits.any():
            return None
        return Mask.from_array(bits)
    return seg


class OracleDenoiser:
    """Returns the exact noise that maps a fixed target image to x_t."""

    def __init__(self, target: Array, schedule: DiffusionSchedule):
        self.target = np.asarray(target, dtype=np.float64)
        self.schedule = schedule

    def __call__(self, x_t, condition, mask, original, t):
        ab = self.schedule.at(t)
        if ab >= 1.0:
            return np.zeros_like(x_t)
        return (x_t - math.sqrt(ab) * self.target) / math.sqrt(1.0 - ab)


class BlobPainter:
    """Toy inpainter that paints a human-like blob and hallucinates inside the mask.

    Inside the current mask it predicts `blob_value` on the blob footprint and
    `halluc_value` elsewhere; outside the mask it predicts the original.
    """

    def __init__(self, blob: Array, schedule: DiffusionSchedule, blob_value: float = 1.0,
                 halluc_value: float = 0.35):
        self.blob = np.asarray(blob, dtype=bool)
        self.schedule = schedule
        self.blob_value = blob_value
        self.halluc_value = halluc_value

    def target(self, mask: Mask, original: Array) -> Array:
        tgt = np.array(original, dtype=np.float64, copy=True)
        inside = mask.bits
        tgt[inside] = self.halluc_value
        tgt[inside & self.blob] = self.blob_value
        return tgt

    def __call__(self, x_t, condition, mask, original, t):
        ab = self.schedule.at(t)
        if ab >= 1.0:
            return np.zeros_like(x_t)
        return (x_t - math.sqrt(ab) * self.target(mask, original)) / math.sqrt(1.0 - ab)
