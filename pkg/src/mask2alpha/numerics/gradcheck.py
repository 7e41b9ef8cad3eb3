from __future__ import annotations

import numpy as np

from ..errors import InvalidValueError
from .rng import SeededRng


def _scalar(loss):
    value = float(np.asarray(loss.data).reshape(()))
    if not np.isfinite(value):
        raise InvalidValueError("loss is not finite")
    return value


def grad_check(forward, params, inputs=(), n_samples=None, eps=1e-3, seed=0):
    """Largest relative gap between reverse-pass and central-difference gradients.

    ``forward(*inputs)`` must return a scalar :class:`Tensor` built from
    ``params``.  When ``n_samples`` is given, that many (parameter, entry)
    pairs are drawn uniformly over all parameter entries; otherwise every
    entry is checked.  Relative error is
    ``|analytic - fd| / (|analytic| + |fd| + 1e-8)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = forward(*inputs)
    _scalar(loss)
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    if n_samples is None:
        picks = [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    else:
        rng = SeededRng(seed)
        flat = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        picks = []
        for f in np.sort(flat):
            i = int(np.searchsorted(offsets, f, side="right") - 1)
            picks.append((i, int(f - offsets[i])))

    worst = 0.0
    for i, j in picks:
        p = params[i]
        view = p.data.reshape(-1)
        orig = view[j]
        view[j] = orig + eps
        plus = _scalar(forward(*inputs))
        view[j] = orig - eps
        minus = _scalar(forward(*inputs))
        view[j] = orig
        fd = (plus - minus) / (2 * eps)
        a = analytic[i].reshape(-1)[j]
        worst = max(worst, abs(a - fd) / (abs(a) + abs(fd) + 1e-8))
    return worst
