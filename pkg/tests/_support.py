"""Shared builders for the decoder gradient check and the toy training run."""
import numpy as np

from mask2alpha.decoder import (
    LAMBDA_C, alpha_loss, confidence_loss, decode_step, fine_target, prepare,
)
from mask2alpha.encoder import encode
from mask2alpha.numerics import SeededRng
from mask2alpha.pipeline import init_model, subset
from mask2alpha.scheduler import compose_mask, forward_marginal_sample, make_schedule


def composite_problem(size=16, seed=0, t=3, T=6):
    """Encoder + decoder loss on a ``size`` x ``size`` input.

    The target alternates 4x4 blocks of 0.02 and 0.98, far from the
    near-0.5 predictions of a fresh model, so no L1 kink lies within a
    finite-difference step of the evaluation point.
    """
    g = np.random.default_rng(seed)
    image = g.random((3, size, size))
    mask = (g.random((size, size)) < 0.5).astype(np.uint8)
    blocks = (np.indices((size, size)) // 4).sum(axis=0) % 2
    alpha_gt = np.where(blocks == 1, 0.98, 0.02)
    params = subset(init_model(seed), "enc.").merged(subset(init_model(seed), "dec."))
    # the guided block only differs from plain attention once beta, r move
    params["enc.beta"].data[...] = 0.3
    params["enc.r"].data[...] = -0.2
    prep = prepare(image, mask)
    m_fine = fine_target(alpha_gt)
    states = forward_marginal_sample(t, make_schedule(T), SeededRng(seed, 9), m_fine.shape)
    m_t = compose_mask(states, m_fine, prep.coarse_quarter)

    def loss():
        feats = encode(params, prep.image_half, prep.region_map)
        out = decode_step(feats, m_t, t, T, params)
        return alpha_loss(out.alpha_pred, m_fine) + LAMBDA_C * confidence_loss(
            out.error_pred, out.alpha_pred, m_fine)

    return loss, params


def toy_samples(count=8, size=64, seed=7):
    from mask2alpha.data import synth_generate
    return [(s.image, s.alpha, s.coarse_mask) for s in synth_generate(count, size, seed)]
