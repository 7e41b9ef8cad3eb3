"""Two-state absorbing transition process between the fine matte and the coarse mask.

State encoding: ``FINE = 0`` and ``COARSE = 1``, so a state grid indexes the
pair ``(fine, coarse)`` directly when composing a mask.  In the forward
(corruption) direction FINE pixels decay to COARSE and COARSE is absorbing;
inference runs the other way, moving the most confident COARSE pixels back
to FINE.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

FINE = 0
COARSE = 1


@dataclass(frozen=True)
class TransitionSchedule:
    T: int
    beta: np.ndarray   # beta[t-1] is the step-t survival probability
    gamma: np.ndarray  # gamma[t] = prod_{s<=t} beta_s, gamma[0] = 1

    def transfer_count(self, t, n_pixels):
        """Pixels moved to FINE on the reverse step t -> t-1.

        ``round(N * (gamma[t-1] - gamma[t]))``, except that the last step
        (t = 1) takes everything so rounding can never strand a pixel.
        """
        if t == 1:
            return n_pixels
        return int(round(n_pixels * (self.gamma[t - 1] - self.gamma[t])))


def make_schedule(T):
    """Linear survival ``gamma_t = 1 - t/T``."""
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T}")
    T = int(T)
    t = np.arange(T + 1)
    gamma = (T - t) / T
    beta = np.array([(T - s) / (T - s + 1) for s in range(1, T + 1)])
    return TransitionSchedule(T=T, beta=beta, gamma=gamma)


def _states(states):
    s = np.asarray(states)
    if not np.isin(s, (FINE, COARSE)).all():
        raise ValueError("state grid must contain only FINE/COARSE")
    return s.astype(np.uint8)


def forward_sample(states, beta_t, rng):
    """One corruption step: FINE survives with probability ``beta_t``."""
    s = _states(states)
    if not 0.0 <= beta_t <= 1.0:
        raise DomainError(f"beta_t={beta_t} outside [0, 1]")
    u = rng.random(s.shape)
    decay = (s == FINE) & (u >= beta_t)
    out = s.copy()
    out[decay] = COARSE
    return out


def forward_marginal_sample(t, schedule, rng, dims):
    """Sample x_t directly from an all-FINE x_0."""
    if not 1 <= t <= schedule.T:
        raise DomainError(f"t={t} outside [1, {schedule.T}]")
    u = rng.random(dims)
    return np.where(u < schedule.gamma[t], FINE, COARSE).astype(np.uint8)


def compose_mask(states, fine, coarse):
    s = _states(states)
    fine = np.asarray(fine, dtype=float)
    coarse = np.asarray(coarse, dtype=float)
    if not (s.shape == fine.shape == coarse.shape):
        raise ShapeError(f"shape mismatch: {s.shape}, {fine.shape}, {coarse.shape}")
    return np.where(s == FINE, fine, coarse)


def inference_transfer(states, predicted_error, k):
    """Flip the ``k`` COARSE pixels with lowest predicted error to FINE.

    Ties resolve in row-major order; FINE pixels are left alone.
    """
    s = _states(states)
    err = np.asarray(predicted_error, dtype=float)
    if err.shape != s.shape:
        raise ShapeError(f"error map {err.shape} != states {s.shape}")
    if k < 0:
        raise DomainError("k must be nonnegative")
    out = s.copy()
    flat_s = out.reshape(-1)
    candidates = np.flatnonzero(flat_s == COARSE)
    k = min(int(k), candidates.size)
    if k == 0:
        return out
    # stable sort keeps row-major order among equal errors
    order = np.argsort(err.reshape(-1)[candidates], kind="stable")
    flat_s[candidates[order[:k]]] = FINE
    return out
