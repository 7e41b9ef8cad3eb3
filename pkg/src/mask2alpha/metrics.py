"""Matting error metrics over whole images: SAD, MSE, gradient and connectivity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from . import kernels
from .errors import DomainError, ShapeError

GRAD_SIGMA = 1.4
CONN_THRESHOLDS = tuple(np.round(np.arange(1, 10) * 0.1, 10))
CONN_MIN_DEGRADATION = 0.15


@dataclass
class MetricReport:
    sad: float
    mse: float
    grad: float
    conn: float

    def lines(self):
        return "\n".join(f"{k}={v:.6g}" for k, v in self.items())

    def items(self):
        return [("sad", self.sad), ("mse", self.mse), ("grad", self.grad), ("conn", self.conn)]


def _pair(pred, gt):
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    if p.shape != g.shape or p.ndim != 2:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} must be equal 2-D grids")
    return p, g


def sad(pred, gt):
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).sum() / 1000.0)


def mse(pred, gt):
    p, g = _pair(pred, gt)
    return float(((p - g) ** 2).mean())


def gaussian_gradient_kernels(sigma=GRAD_SIGMA):
    """Unit-norm x/y first-derivative-of-Gaussian filters, radius ceil(3 sigma)."""
    r = math.ceil(3 * sigma)
    u = np.arange(-r, r + 1, dtype=float)
    g = np.exp(-u ** 2 / (2 * sigma ** 2)) / (sigma * math.sqrt(2 * math.pi))
    dg = -u * g / sigma ** 2
    hx = np.outer(g, dg)  # rows vary along y, derivative along x
    hx /= np.sqrt((hx ** 2).sum())
    return hx, hx.T.copy()


def _gradient_magnitude(a, hx, hy):
    # edge replication, so constant grids have no gradient anywhere
    gx = correlate(a, hx, mode="nearest")
    gy = correlate(a, hy, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_error(pred, gt, sigma=GRAD_SIGMA):
    p, g = _pair(pred, gt)
    hx, hy = gaussian_gradient_kernels(sigma)
    r = hx.shape[0] // 2
    if min(p.shape) < r:
        raise DomainError(f"grid {p.shape} smaller than the filter radius {r}")
    diff = _gradient_magnitude(p, hx, hy) - _gradient_magnitude(g, hx, hy)
    return float((diff ** 2).sum() / 1000.0)


def connectivity_levels(pred, gt, thresholds=CONN_THRESHOLDS, largest=None):
    """Per-pixel level ``l``: the last threshold before the pixel first leaves
    the largest jointly-connected region; 1 if it never leaves.  Equal-size
    largest regions are all kept."""
    p, g = _pair(pred, gt)
    largest = kernels.largest_component if largest is None else largest
    level = np.full(p.shape, -1.0)
    prev = 0.0
    for theta in thresholds:
        joint = np.ascontiguousarray((p >= theta) & (g >= theta), dtype=np.uint8)
        omega = largest(joint)
        drop = (level == -1) & ~omega
        level[drop] = prev
        prev = theta
    level[level == -1] = 1.0
    return level


def conn_error(pred, gt, thresholds=CONN_THRESHOLDS):
    p, g = _pair(pred, gt)
    level = connectivity_levels(p, g, thresholds)
    dp = p - level
    dg = g - level
    phi_p = 1.0 - dp * (dp >= CONN_MIN_DEGRADATION)
    phi_g = 1.0 - dg * (dg >= CONN_MIN_DEGRADATION)
    # correctly rounded sum: the value does not depend on pixel order
    return math.fsum(np.abs(phi_p - phi_g).ravel()) / 1000.0


def evaluate(pred, gt):
    return MetricReport(sad=sad(pred, gt), mse=mse(pred, gt),
                        grad=grad_error(pred, gt), conn=conn_error(pred, gt))
