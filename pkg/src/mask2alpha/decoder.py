"""Iterative alpha/confidence decoder, its losses, training step and refinement loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from . import numerics as nx
from .encoder import DIM, STEM_CHANNELS, encode
from .errors import InvalidValueError, ShapeError
from .numerics import ParamSet, Tensor, fan_in_normal
from .regions import build_region_map, downsample_mask
from .scheduler import (
    COARSE, FINE, compose_mask, forward_marginal_sample, inference_transfer,
)

WIDTH = 32
TIME_CHANNELS = 8
TRUNK_BLOCKS = 3
LAMBDA_C = 0.25
# the learned mask skip enters the alpha logit scaled by this constant so that
# plain SGD moves it at the same pace as the trunk
MASK_GAIN = 8.0
# same construction for the error head, fed the local range of the mask:
# mistakes concentrate where the guidance changes value
EDGE_GAIN = 8.0


@dataclass
class DecodeOutput:
    alpha_pred: Tensor  # h x w, values in (0, 1)
    error_pred: Tensor  # h x w, predicted |alpha_pred - alpha_gt|

    @property
    def alpha(self):
        return self.alpha_pred.data

    @property
    def error(self):
        return self.error_pred.data


def init_decoder(rng, prefix="dec."):
    p = ParamSet()
    c_in = DIM + STEM_CHANNELS + 1 + TIME_CHANNELS
    p.add(f"{prefix}in.w", fan_in_normal(rng, (WIDTH, c_in, 3, 3), c_in * 9))
    p.add(f"{prefix}in.b", np.zeros(WIDTH))
    for i in range(TRUNK_BLOCKS):
        p.add(f"{prefix}block{i}.w", fan_in_normal(rng, (WIDTH, WIDTH, 3, 3), WIDTH * 9, gain=0.5))
        p.add(f"{prefix}block{i}.b", np.zeros(WIDTH))
    p.add(f"{prefix}alpha.w", fan_in_normal(rng, (1, WIDTH, 1, 1), WIDTH))
    p.add(f"{prefix}alpha.b", np.zeros(1))
    p.add(f"{prefix}skip", np.zeros(()))
    p.add(f"{prefix}error.w", fan_in_normal(rng, (1, WIDTH, 1, 1), WIDTH, gain=0.1))
    # start with small predicted errors
    p.add(f"{prefix}error.b", np.full(1, -2.0))
    p.add(f"{prefix}error.skip", np.zeros(()))
    return p


def mask_edges(m):
    """Range of ``m`` over each 3x3 neighbourhood: 0 in flat areas, 1 across a hard edge."""
    return maximum_filter(m, size=3, mode="nearest") - minimum_filter(m, size=3, mode="nearest")


def time_embedding(t, T, h, w):
    s = t / T
    freqs = 2.0 ** np.arange(TIME_CHANNELS // 2)
    values = np.concatenate([np.sin(freqs * s), np.cos(freqs * s)])
    return np.broadcast_to(values[:, None, None], (TIME_CHANNELS, h, w)).copy()


def decode_step(features, m_t, t, T, params, prefix="dec."):
    """One evaluation of the refinement network on the current mask ``m_t``."""
    p = params
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    quarter = features.quarter_res
    _, h, w = quarter.shape
    m = np.asarray(m_t.data if isinstance(m_t, Tensor) else m_t, dtype=float)
    if m.shape != (h, w):
        raise ShapeError(f"mask {m.shape} does not match features {h}x{w}")
    if features.half_res.shape[1:] != (2 * h, 2 * w):
        raise ShapeError("half-resolution features are not twice the decoder resolution")
    pooled = nx.avg_pool2(features.half_res)
    x = nx.concat([quarter, pooled, m[None], time_embedding(t, T, h, w)], axis=0)
    x = nx.gelu(nx.conv2d(x, p[prefix + "in.w"], p[prefix + "in.b"]))
    for i in range(TRUNK_BLOCKS):
        x = x + nx.gelu(nx.conv2d(x, p[f"{prefix}block{i}.w"], p[f"{prefix}block{i}.b"]))
    logit = nx.conv2d(x, p[prefix + "alpha.w"], p[prefix + "alpha.b"])
    alpha = nx.sigmoid(logit + p[prefix + "skip"] * (MASK_GAIN * (2.0 * m[None] - 1.0)))
    edge = EDGE_GAIN * (2.0 * mask_edges(m)[None] - 1.0)
    error = nx.sigmoid(nx.conv2d(x, p[prefix + "error.w"], p[prefix + "error.b"])
                       + p[prefix + "error.skip"] * edge)
    return DecodeOutput(nx.reshape(alpha, (h, w)), nx.reshape(error, (h, w)))


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def confidence_loss(error_pred, alpha_pred, alpha_gt):
    """Mean over pixels of ``|c - |alpha_pred - alpha_gt||``."""
    c = nx.as_tensor(error_pred)
    ap = nx.as_tensor(alpha_pred)
    ag = np.asarray(alpha_gt, dtype=float)
    _check_pair(c, ap)
    _check_pair(c, ag)
    return nx.mean(nx.absolute(c - nx.absolute(ap - ag)))


def alpha_loss(alpha_pred, alpha_gt):
    a = nx.as_tensor(alpha_pred)
    ag = np.asarray(alpha_gt, dtype=float)
    _check_pair(a, ag)
    return nx.mean(nx.absolute(a - ag))


@dataclass
class PreparedInput:
    """Image and mask resampled to the encoder and decoder resolutions."""
    image_half: np.ndarray
    region_map: np.ndarray
    coarse_quarter: np.ndarray


def prepare(image, coarse_mask, band_radius=2):
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected 3 x H x W image, got {image.shape}")
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise ShapeError(f"image {h}x{w} must be divisible by 8")
    mask = np.asarray(coarse_mask)
    if mask.shape != (h, w):
        raise ShapeError(f"mask {mask.shape} does not match image {h}x{w}")
    half = nx.bilinear_resize_forward(image, h // 2, w // 2)
    region = build_region_map(downsample_mask(mask, 2), band_radius)
    coarse = downsample_mask(mask, 4).astype(float)
    return PreparedInput(half, region, coarse)


def fine_target(alpha_gt):
    """Quarter-resolution ground truth: mean over each 4x4 block (its coverage)."""
    a = np.asarray(alpha_gt, dtype=float)
    h, w = a.shape
    if h % 4 or w % 4:
        raise ShapeError(f"alpha {h}x{w} must be divisible by 4")
    return a.reshape(h // 4, 4, w // 4, 4).mean(axis=(1, 3))


def train_step(sample, schedule, params, rng, learning_rate, lambda_c=LAMBDA_C, t=None,
               prepared=None):
    """One SGD step on a (image, alpha_gt, coarse_mask) sample; returns the pre-update loss.

    ``t`` is drawn uniformly from 1..T unless fixed by the caller.  A
    precomputed :class:`PreparedInput` may be passed to skip resampling.
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be nonnegative")
    image, alpha_gt, coarse_mask = sample
    prep = prepared if prepared is not None else prepare(image, coarse_mask)
    m_fine = fine_target(alpha_gt)
    m_coarse = prep.coarse_quarter
    if t is None:
        t = int(rng.integers(1, schedule.T + 1))
    states = forward_marginal_sample(t, schedule, rng, m_fine.shape)
    m_t = compose_mask(states, m_fine, m_coarse)

    params.zero_grad()
    try:
        feats = encode(params, prep.image_half, prep.region_map)
        out = decode_step(feats, m_t, t, schedule.T, params)
        loss = alpha_loss(out.alpha_pred, m_fine) + lambda_c * confidence_loss(
            out.error_pred, out.alpha_pred, m_fine)
    except InvalidValueError as exc:
        raise InvalidValueError(f"non-finite loss at t={t}: {exc}") from exc
    value = loss.item()
    loss.backward()
    grads = [p.grad for p in params.values()]
    if not all(np.isfinite(g).all() for g in grads):
        raise InvalidValueError("non-finite gradient; parameters left unchanged")
    if learning_rate > 0:
        for p in params.values():
            p.data -= learning_rate * p.grad
    return value


@dataclass
class RefineResult:
    m0: np.ndarray
    error: np.ndarray
    alpha: np.ndarray
    decode_calls: int
    states: list = field(default_factory=list)


def refine_loop(step_fn, m_coarse, schedule, record=False):
    """Reverse refinement from the coarse mask.

    ``step_fn(m_t, t) -> (alpha, error)`` supplies the per-step prediction.
    All pixels start COARSE; each step moves the most confident COARSE pixels
    to FINE and FINE pixels take the latest prediction.
    """
    m_coarse = np.asarray(m_coarse, dtype=float)
    states = np.full(m_coarse.shape, COARSE, dtype=np.uint8)
    m = m_coarse.copy()
    n = m.size
    trace = [states.copy()] if record else []
    alpha = error = None
    calls = 0
    for t in range(schedule.T, 0, -1):
        alpha, error = step_fn(m, t)
        calls += 1
        states = inference_transfer(states, error, schedule.transfer_count(t, n))
        m = compose_mask(states, alpha, m_coarse)
        if record:
            trace.append(states.copy())
    assert (states == FINE).all()
    return RefineResult(m0=m, error=np.asarray(error), alpha=np.asarray(alpha),
                        decode_calls=calls, states=trace)


def infer(image, coarse_mask, schedule, params, record=False):
    """Run the encoder once, then the refinement loop at quarter resolution."""
    prep = prepare(image, coarse_mask)
    with nx.no_grad():
        feats = encode(params, prep.image_half, prep.region_map)

        def step(m_t, t):
            out = decode_step(feats, m_t, t, schedule.T, params)
            return out.alpha, out.error

        return refine_loop(step, prep.coarse_quarter, schedule, record=record)
