"""End-to-end model: parameter initialization, full inference, and training loops."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import LAMBDA_C, infer, init_decoder, prepare, train_step
from .encoder import init_encoder
from .numerics import Adam, ParamSet, SeededRng
from .sparse import (
    build_sparsity_map, init_sparse, sparse_refine, sparse_train_step, upsample,
)


DEFAULT_T = 6
DEFAULT_TAU = 0.05


def init_model(seed):
    rng = SeededRng(seed, 0xE11C)
    return init_encoder(rng).merged(init_decoder(rng), init_sparse(rng))


def subset(params, prefix):
    return ParamSet((k, v) for k, v in params.items() if k.startswith(prefix))


@dataclass
class PipelineResult:
    alpha: np.ndarray        # H x W refined matte
    low_res: np.ndarray      # H/4 x W/4 matte from the refinement loop
    error: np.ndarray        # H/4 x W/4 predicted error
    error_full: np.ndarray   # H x W upsampled predicted error
    active_fraction: float
    decode_calls: int
    states: list


def run_pipeline(params, image, mask, schedule, tau=DEFAULT_TAU, sparse=True, record=False):
    res = infer(image, mask, schedule, params, record=record)
    _, h, w = np.asarray(image).shape
    err_full = np.clip(upsample(res.error, h, w), 0.0, 1.0)
    if sparse:
        smap = build_sparsity_map(err_full, tau)
        alpha = sparse_refine(res.m0, image, smap, params)
        frac = smap.occupancy
    else:
        alpha = upsample(res.m0, h, w)
        frac = 0.0
    return PipelineResult(alpha, res.m0, res.error, err_full, frac, res.decode_calls, res.states)


def train_decoder(params, samples, schedule, steps, lr, seed, lambda_c=LAMBDA_C,
                  log_every=50, on_log=None):
    """SGD over encoder + decoder, visiting samples in order; returns the loss history."""
    rng = SeededRng(seed, 0x7A1)
    trainable = subset(params, "enc.").merged(subset(params, "dec."))
    prepared = [prepare(img, mask) for img, _, mask in samples]
    history = []
    for step in range(steps):
        i = step % len(samples)
        loss = train_step(samples[i], schedule, trainable, rng, lr, lambda_c,
                          prepared=prepared[i])
        history.append(loss)
        if on_log is not None and (step % log_every == 0 or step == steps - 1):
            on_log(step, loss)
    return history


def train_refiner(params, samples, schedule, steps, lr, tau=DEFAULT_TAU, on_log=None,
                  log_every=50):
    """Fit the sparse refiner on the trained decoder's own low-resolution output.

    The refinement loop runs once per sample; its matte and predicted error
    are then held fixed while the refiner trains with Adam on the resulting
    active sets.
    """
    trainable = subset(params, "sgsdr.")
    optimizer = Adam(trainable, lr)
    cached = []
    for image, alpha, mask in samples:
        res = infer(image, mask, schedule, params)
        _, h, w = image.shape
        smap = build_sparsity_map(np.clip(upsample(res.error, h, w), 0.0, 1.0), tau)
        cached.append((res.m0, image, smap, alpha))
    history = []
    for step in range(steps):
        a_low, image, smap, alpha = cached[step % len(cached)]
        if len(smap.active) == 0:
            continue
        loss = sparse_train_step(a_low, image, smap, alpha, trainable, lr, optimizer)
        history.append(loss)
        if on_log is not None and (step % log_every == 0 or step == steps - 1):
            on_log(step, loss)
    return history
