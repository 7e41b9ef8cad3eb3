"""Tiny ViT encoder whose last block uses region-weighted attention.

Layout: 3x3 conv stem on the half-resolution image (kept as the fine pyramid
level), 2x2/stride-2 patch embedding, class token plus learned position
embeddings, four pre-norm transformer blocks.  Only the final block reads the
region map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ShapeError
from .numerics import ParamSet, Tensor, fan_in_normal
from .regions import patch_labels, region_weights

STEM_CHANNELS = 16
DIM = 32
HEADS = 4
HEAD_DIM = DIM // HEADS
MLP_HIDDEN = 64
BLOCKS = 4
POS_GRID = 16


@dataclass
class FeaturePyramid:
    half_res: Tensor     # STEM_CHANNELS x H/2 x W/2
    quarter_res: Tensor  # DIM x H/4 x W/4


def init_encoder(rng, prefix="enc."):
    p = ParamSet()

    def lin(name, n_out, n_in):
        p.add(f"{prefix}{name}.w", fan_in_normal(rng, (n_out, n_in), n_in))
        p.add(f"{prefix}{name}.b", np.zeros(n_out))

    p.add(f"{prefix}stem.w", fan_in_normal(rng, (STEM_CHANNELS, 3, 3, 3), 27))
    p.add(f"{prefix}stem.b", np.zeros(STEM_CHANNELS))
    lin("patch", DIM, STEM_CHANNELS * 4)
    p.add(f"{prefix}cls", rng.normal(0.0, 0.02, DIM))
    p.add(f"{prefix}pos", rng.normal(0.0, 0.02, (DIM, POS_GRID, POS_GRID)))
    for i in range(BLOCKS):
        b = f"block{i}."
        p.add(f"{prefix}{b}ln1.g", np.ones(DIM))
        p.add(f"{prefix}{b}ln1.b", np.zeros(DIM))
        for proj in ("q", "k", "v", "o"):
            lin(b + proj, DIM, DIM)
        p.add(f"{prefix}{b}ln2.g", np.ones(DIM))
        p.add(f"{prefix}{b}ln2.b", np.zeros(DIM))
        lin(b + "mlp1", MLP_HIDDEN, DIM)
        lin(b + "mlp2", DIM, MLP_HIDDEN)
    p.add(f"{prefix}norm.g", np.ones(DIM))
    p.add(f"{prefix}norm.b", np.zeros(DIM))
    # zero start: the guided block begins as plain attention
    p.add(f"{prefix}beta", np.zeros(()))
    p.add(f"{prefix}r", np.zeros(()))
    return p


def _linear(x, p, name):
    return x @ nx.transpose(p[name + ".w"], (1, 0)) + p[name + ".b"]


def _split_heads(x, n_tokens):
    # (N+1, D) -> (heads, N+1, head_dim)
    return nx.transpose(nx.reshape(x, (n_tokens, HEADS, HEAD_DIM)), (1, 0, 2))


def mgfsm_attention(q, k, v, key_weights, beta, r):
    """Region-weighted scaled dot-product attention.

    ``q``, ``k``, ``v`` are ``(..., N+1, C)`` with token 0 the class token;
    ``key_weights`` has length N and modulates key columns 1..N.  The class
    column keeps its raw logit.
    """
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    n1, c = q.shape[-2], q.shape[-1]
    w = np.asarray(key_weights, dtype=float)
    if w.shape != (n1 - 1,):
        raise ShapeError(f"expected {n1 - 1} key weights, got shape {w.shape}")
    beta, r = nx.as_tensor(beta), nx.as_tensor(r)
    logits = q @ nx.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    w_ext = np.concatenate([[0.0], w])
    not_cls = np.concatenate([[0.0], np.ones(n1 - 1)])
    modulation = beta * w_ext + r * not_cls
    s = logits * modulation
    attn = nx.softmax_rows((s + logits) * (1.0 / math.sqrt(c)))
    return attn @ v


def standard_attention(q, k, v):
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    c = q.shape[-1]
    logits = q @ nx.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    return nx.softmax_rows(logits * (1.0 / math.sqrt(c))) @ v


def _attention_block(x, p, b, key_weights, guided, prefix):
    n1 = x.shape[0]
    h = nx.layer_norm(x, p[b + "ln1.g"], p[b + "ln1.b"])
    q = _split_heads(_linear(h, p, b + "q"), n1)
    k = _split_heads(_linear(h, p, b + "k"), n1)
    v = _split_heads(_linear(h, p, b + "v"), n1)
    if guided:
        out = mgfsm_attention(q, k, v, key_weights, p[prefix + "beta"], p[prefix + "r"])
    else:
        out = standard_attention(q, k, v)
    out = nx.reshape(nx.transpose(out, (1, 0, 2)), (n1, DIM))
    x = x + _linear(out, p, b + "o")
    h = nx.layer_norm(x, p[b + "ln2.g"], p[b + "ln2.b"])
    return x + _linear(nx.gelu(_linear(h, p, b + "mlp1")), p, b + "mlp2")


def token_weights(region_map):
    return region_weights(patch_labels(region_map, 2)).reshape(-1)


def encode(params, image_half, region_map, guided=True, prefix="enc."):
    """Feature pyramid for a 3 x H/2 x W/2 image and its H/2 region map.

    ``guided=False`` swaps the last block for plain attention, giving the
    reference encoder the guided one must reproduce when beta = r = 0.
    """
    p = params
    img = nx.as_tensor(image_half)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W image, got {img.shape}")
    _, h2, w2 = img.shape
    if h2 % 4 or w2 % 4:
        raise ShapeError(f"half-resolution input {h2}x{w2} must be divisible by 4")
    if np.asarray(region_map).shape != (h2, w2):
        raise ShapeError(f"region map {np.asarray(region_map).shape} != image {h2}x{w2}")
    half = nx.gelu(nx.conv2d(img, p[prefix + "stem.w"], p[prefix + "stem.b"]))

    h, w = h2 // 2, w2 // 2
    n = h * w
    c1 = STEM_CHANNELS
    x = nx.reshape(half, (c1 * h, 2, w, 2))
    x = nx.transpose(x, (0, 2, 1, 3))
    x = nx.reshape(x, (c1, h, w, 4))
    x = nx.transpose(x, (1, 2, 0, 3))
    tokens = _linear(nx.reshape(x, (n, c1 * 4)), p, prefix + "patch")
    pos = nx.bilinear_resize(p[prefix + "pos"], h, w)
    tokens = tokens + nx.transpose(nx.reshape(pos, (DIM, n)), (1, 0))
    x = nx.concat([nx.reshape(p[prefix + "cls"], (1, DIM)), tokens], axis=0)

    weights = token_weights(region_map)
    for i in range(BLOCKS):
        last = i == BLOCKS - 1
        x = _attention_block(x, p, f"{prefix}block{i}.", weights, guided and last, prefix)
    x = nx.layer_norm(x, p[prefix + "norm.g"], p[prefix + "norm.b"])
    feats = nx.take(x, (slice(1, None),))
    quarter = nx.reshape(nx.transpose(feats, (1, 0)), (DIM, h, w))
    return FeaturePyramid(half_res=half, quarter_res=quarter)
