"""Confidence-gated sparse detail recovery at full resolution.

Pixels whose upsampled predicted error exceeds ``tau`` form the active set.
A small residual network runs only on those sites with submanifold
semantics: inactive activations read as zero and inactive outputs are never
produced.  The network predicts a bounded correction added to the bilinearly
upsampled low-resolution matte, so inactive pixels keep that matte exactly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import numerics as nx
from .errors import DomainError, ShapeError
from .numerics import ParamSet, fan_in_normal

WIDTH = 16
RES_BLOCKS = 2


@dataclass
class SparsityMap:
    grid: np.ndarray    # H x W bool
    active: np.ndarray  # (n, 2) int64 (row, col), row-major order

    @classmethod
    def from_grid(cls, grid):
        g = np.asarray(grid, dtype=bool)
        if g.ndim != 2:
            raise ShapeError(f"sparsity grid must be 2-D, got {g.shape}")
        return cls(grid=g, active=np.argwhere(g).astype(np.int64))

    @property
    def shape(self):
        return self.grid.shape

    @property
    def occupancy(self):
        return self.active.shape[0] / self.grid.size

    def index_grid(self):
        idx = np.full(self.grid.shape, -1, dtype=np.int64)
        idx[self.active[:, 0], self.active[:, 1]] = np.arange(len(self.active))
        return idx

    def neighbors(self, k, backend=None):
        impl = kernels if backend is None else kernels.get_backend(backend)
        return impl.build_neighbors(self.index_grid(), np.ascontiguousarray(self.active), k)


def build_sparsity_map(error_full, tau):
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau={tau} outside [0, 1]")
    e = np.asarray(error_full, dtype=float)
    if e.ndim != 2:
        raise ShapeError(f"error map must be 2-D, got {e.shape}")
    return SparsityMap.from_grid(e > tau)


def random_map(shape, occupancy, rng):
    """Uniformly random active set with exactly ``round(occupancy * N)`` sites."""
    n = shape[0] * shape[1]
    k = int(round(occupancy * n))
    grid = np.zeros(n, dtype=bool)
    grid[rng.choice(n, size=k, replace=False)] = True
    return SparsityMap.from_grid(grid.reshape(shape))


# -- parameters ----------------------------------------------------------------

def init_sparse(rng, prefix="sgsdr."):
    p = ParamSet()
    p.add(f"{prefix}entry.w", fan_in_normal(rng, (WIDTH, 4, 3, 3), 36))
    p.add(f"{prefix}entry.b", np.zeros(WIDTH))
    for i in range(RES_BLOCKS):
        for j in (1, 2):
            gain = 1.0 if j == 1 else 0.5
            p.add(f"{prefix}res{i}.conv{j}.w",
                  fan_in_normal(rng, (WIDTH, WIDTH, 3, 3), WIDTH * 9, gain=gain))
            p.add(f"{prefix}res{i}.conv{j}.b", np.zeros(WIDTH))
    # zero head: refinement starts as the identity on the upsampled matte
    p.add(f"{prefix}head.w", np.zeros((1, WIDTH, 1, 1)))
    p.add(f"{prefix}head.b", np.zeros(1))
    return p


def conv_layers(prefix="sgsdr."):
    """(name, C_in, C_out, K) for every convolution, in evaluation order."""
    layers = [(prefix + "entry", 4, WIDTH, 3)]
    for i in range(RES_BLOCKS):
        layers += [(f"{prefix}res{i}.conv1", WIDTH, WIDTH, 3),
                   (f"{prefix}res{i}.conv2", WIDTH, WIDTH, 3)]
    layers.append((prefix + "head", WIDTH, 1, 1))
    return layers


def _value(p, name):
    v = p[name]
    return v.data if isinstance(v, nx.Tensor) else np.asarray(v)


def upsample(a_low, h, w):
    a = np.asarray(a_low, dtype=float)
    return nx.bilinear_resize_forward(a[None], h, w)[0]


def _check_inputs(a_low, image, smap):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected 3 x H x W image, got {image.shape}")
    _, h, w = image.shape
    if h % 4 or w % 4:
        raise ShapeError(f"image {h}x{w} must be divisible by 4")
    if np.asarray(a_low).shape != (h // 4, w // 4):
        raise ShapeError(f"low-res matte {np.asarray(a_low).shape} is not a quarter of {h}x{w}")
    if smap.shape != (h, w):
        raise ShapeError(f"sparsity map {smap.shape} does not match image {h}x{w}")
    return h, w


# -- sparse engine -------------------------------------------------------------

def submanifold_conv(x, smap, kernel, bias, backend=None):
    """Dense-layout wrapper around the site convolution: C x H x W in, O x H x W out."""
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"incompatible input {x.shape} and kernel {kernel.shape}")
    if x.shape[1:] != smap.shape:
        raise ShapeError(f"input {x.shape[1:]} does not match map {smap.shape}")
    k = kernel.shape[-1]
    if k not in (1, 3) or kernel.shape[-2] != k:
        raise ShapeError("kernel must be 1x1 or 3x3")
    impl = kernels if backend is None else kernels.get_backend(backend)
    rows, cols = smap.active[:, 0], smap.active[:, 1]
    feat = np.ascontiguousarray(x[:, rows, cols].T)
    out_sites = _site_conv(impl, feat, smap.neighbors(k, backend), kernel, bias, x.dtype)
    out = np.zeros((kernel.shape[0],) + smap.shape, dtype=x.dtype)
    out[:, rows, cols] = out_sites.T
    return out


def _site_weight(kernel, dtype):
    o, c, k, _ = kernel.shape
    # (O, C, K, K) -> (taps, C, O), taps in row-major offset order
    return np.ascontiguousarray(kernel.transpose(2, 3, 1, 0).reshape(k * k, c, o), dtype=dtype)


def _site_conv(impl, feat, nbr, kernel, bias, dtype):
    b = np.zeros(kernel.shape[0]) if bias is None else np.asarray(bias)
    return impl.subm_conv(np.ascontiguousarray(feat, dtype=dtype), nbr,
                          _site_weight(np.asarray(kernel), dtype),
                          np.ascontiguousarray(b, dtype=dtype))


def sparse_refine(a_low, image, smap, params, dtype=np.float64, backend=None, prefix="sgsdr."):
    """Refined full-resolution matte; only active sites are computed."""
    h, w = _check_inputs(a_low, image, smap)
    up = upsample(a_low, h, w)
    out = up.copy()
    if len(smap.active) == 0:
        return out
    impl = kernels if backend is None else kernels.get_backend(backend)
    rows, cols = smap.active[:, 0], smap.active[:, 1]
    feat = np.concatenate([np.asarray(image, dtype=float)[:, rows, cols], up[None, rows, cols]]).T
    nbr3 = impl.build_neighbors(smap.index_grid(), np.ascontiguousarray(smap.active), 3)
    nbr1 = np.arange(len(rows), dtype=np.int64)[:, None]

    def conv(f, name, nbr):
        return _site_conv(impl, f, nbr, _value(params, name + ".w"), _value(params, name + ".b"),
                          dtype)

    hid = np.maximum(conv(feat, prefix + "entry", nbr3), 0)
    for i in range(RES_BLOCKS):
        r = np.maximum(conv(hid, f"{prefix}res{i}.conv1", nbr3), 0)
        hid = np.maximum(hid + conv(r, f"{prefix}res{i}.conv2", nbr3), 0)
    delta = np.tanh(conv(hid, prefix + "head", nbr1)[:, 0])
    out[rows, cols] = np.clip(up[rows, cols] + delta, 0.0, 1.0)
    return out


# -- dense references ----------------------------------------------------------

def _dense_forward(a_low, image, grid, params, dtype, prefix):
    """Dense evaluation; ``grid`` (or None for no masking) zeroes inactive
    sites of the network input and of every convolution output."""
    _, h, w = np.asarray(image).shape
    up = upsample(a_low, h, w)
    keep = None if grid is None else grid.astype(dtype)[None]

    def conv(x, name):
        y = nx.conv2d_forward(x, _value(params, name + ".w").astype(dtype),
                              _value(params, name + ".b").astype(dtype))
        return y if keep is None else y * keep

    x = np.concatenate([np.asarray(image, dtype=float), up[None]]).astype(dtype)
    if keep is not None:
        x = x * keep
    hid = np.maximum(conv(x, prefix + "entry"), 0)
    for i in range(RES_BLOCKS):
        r = np.maximum(conv(hid, f"{prefix}res{i}.conv1"), 0)
        hid = np.maximum(hid + conv(r, f"{prefix}res{i}.conv2"), 0)
    delta = np.tanh(conv(hid, prefix + "head")[0])
    return up, delta


def dense_zeroed_oracle(a_low, image, smap, params, dtype=np.float64, prefix="sgsdr."):
    """Same network run densely, inactive activations forced to zero.

    The network input is zeroed off the active set too, matching the
    submanifold rule that inactive sites read as zero.
    """
    _check_inputs(a_low, image, smap)
    up, delta = _dense_forward(a_low, image, smap.grid, params, dtype, prefix)
    return np.where(smap.grid, np.clip(up + delta, 0.0, 1.0), up)


def dense_refine(a_low, image, params, dtype=np.float64, prefix="sgsdr."):
    """Plain dense evaluation over every pixel (the no-sparsity baseline)."""
    up, delta = _dense_forward(a_low, image, None, params, dtype, prefix)
    return np.clip(up + delta, 0.0, 1.0)


# -- training ------------------------------------------------------------------

def refine_loss(a_low, image, smap, alpha_gt, params, prefix="sgsdr."):
    """Differentiable L1 between the refined and true matte over active pixels.

    Evaluated in the dense-zeroed form, whose active-site values and
    gradients equal the sparse engine's.
    """
    _, h, w = np.asarray(image).shape
    up = upsample(a_low, h, w)
    keep = smap.grid.astype(float)[None]
    n = max(int(smap.grid.sum()), 1)

    def conv(x, name):
        return nx.conv2d(x, params[name + ".w"], params[name + ".b"]) * keep

    x = np.concatenate([np.asarray(image, dtype=float), up[None]]) * keep
    hid = nx.relu(conv(x, prefix + "entry"))
    for i in range(RES_BLOCKS):
        r = nx.relu(conv(hid, f"{prefix}res{i}.conv1"))
        hid = nx.relu(hid + conv(r, f"{prefix}res{i}.conv2"))
    delta = nx.tanh(conv(hid, prefix + "head"))
    diff = (up[None] + delta - np.asarray(alpha_gt, dtype=float)[None]) * keep
    return nx.total(nx.absolute(diff)) * (1.0 / n)


def sparse_train_step(a_low, image, smap, alpha_gt, params, learning_rate, optimizer=None):
    """One update of the refiner; plain SGD unless an ``optimizer`` (e.g. Adam) is given."""
    params.zero_grad()
    loss = refine_loss(a_low, image, smap, alpha_gt, params)
    value = loss.item()
    loss.backward()
    if optimizer is not None:
        optimizer.step()
    else:
        for p in params.values():
            p.data -= learning_rate * p.grad
    return value


# -- accounting ----------------------------------------------------------------

def _inbounds_pairs(h, w, k):
    r = k // 2
    return sum((h - abs(dy)) * (w - abs(dx))
               for dy in range(-r, r + 1) for dx in range(-r, r + 1)
               if h > abs(dy) and w > abs(dx))


def mac_count(smap, layers=None):
    """(sparse_macs, dense_macs) for one pass of the refinement network.

    Both count only in-bounds taps; the sparse figure further restricts to
    active outputs reading active inputs.
    """
    layers = conv_layers() if layers is None else layers
    h, w = smap.shape
    pairs = {}
    sparse = dense = 0
    for _, cin, cout, k in layers:
        if k not in pairs:
            nbr = smap.neighbors(k) if len(smap.active) else np.empty((0, k * k))
            pairs[k] = int((nbr >= 0).sum())
        sparse += pairs[k] * cin * cout
        dense += _inbounds_pairs(h, w, k) * cin * cout
    return sparse, dense


def bench_line(occupancy, size, params, rng, repeats=3, backend=None):
    """One benchmark record at the given occupancy, as a ``key=value`` line."""
    smap = random_map((size, size), occupancy, rng)
    image = rng.random((3, size, size))
    a_low = rng.random((size // 4, size // 4))
    sparse_macs, dense_macs = mac_count(smap)

    def best(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return 1000.0 * min(times)

    sparse_ms = best(lambda: sparse_refine(a_low, image, smap, params, backend=backend))
    dense_ms = best(lambda: dense_refine(a_low, image, params))
    return (f"occupancy={occupancy:g} sparse_macs={sparse_macs} dense_macs={dense_macs} "
            f"sparse_ms={sparse_ms:.3f} dense_ms={dense_ms:.3f}")
