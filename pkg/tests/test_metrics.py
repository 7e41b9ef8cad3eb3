import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mask2alpha import kernels
from mask2alpha.errors import DomainError, ShapeError
from mask2alpha.metrics import conn_error, evaluate, grad_error, mse, sad


def loop_sad(p, g):
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            total += abs(p[i, j] - g[i, j])
    return total / 1000.0


def loop_mse(p, g):
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            total += (p[i, j] - g[i, j]) ** 2
    return total / p.size


def reference_grad(p, g, sigma=1.4):
    """Direct evaluation: build the filters, replicate edges, correlate by loops."""
    r = math.ceil(3 * sigma)
    taps = range(-r, r + 1)
    gauss = {u: math.exp(-u * u / (2 * sigma * sigma)) for u in taps}
    deriv = {u: -u / (sigma * sigma) * gauss[u] for u in taps}
    norm = math.sqrt(sum((gauss[v] * deriv[u]) ** 2 for u in taps for v in taps))

    def magnitude(a):
        h, w = a.shape
        out = np.zeros_like(a)
        for y in range(h):
            for x in range(w):
                gx = gy = 0.0
                for v in taps:
                    for u in taps:
                        yy = min(max(y + v, 0), h - 1)
                        xx = min(max(x + u, 0), w - 1)
                        gx += gauss[v] * deriv[u] / norm * a[yy, xx]
                        gy += deriv[v] * gauss[u] / norm * a[yy, xx]
                out[y, x] = math.hypot(gx, gy)
        return out

    return float(((magnitude(p) - magnitude(g)) ** 2).sum() / 1000.0)


def _components(mask):
    """4-connected components by breadth-first search, in raster order of first pixel."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                comp, queue = [], deque([(y, x)])
                seen[y, x] = True
                while queue:
                    cy, cx = queue.popleft()
                    comp.append((cy, cx))
                    for ny, nx_ in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx_ < w and mask[ny, nx_] and not seen[ny, nx_]:
                            seen[ny, nx_] = True
                            queue.append((ny, nx_))
                comps.append(comp)
    return comps


def brute_conn(p, g):
    thresholds = [k / 10 for k in range(1, 10)]
    largest = []
    for theta in thresholds:
        comps = _components((p >= theta) & (g >= theta))
        top = max((len(c) for c in comps), default=0)
        largest.append({px for c in comps if len(c) == top for px in c})
    terms = []
    for y in range(p.shape[0]):
        for x in range(p.shape[1]):
            level = 1.0
            for i, theta in enumerate(thresholds):
                if (y, x) not in largest[i]:
                    level = thresholds[i - 1] if i else 0.0
                    break
            phis = []
            for a in (p[y, x], g[y, x]):
                d = a - level
                phis.append(1.0 - (d if d >= 0.15 else 0.0))
            terms.append(abs(phis[0] - phis[1]))
    return math.fsum(terms) / 1000.0


def crafted_pairs(n=20, seed=0):
    """4x4 pairs quantized to tenths so thresholds fall exactly on values."""
    g = np.random.default_rng(seed)
    pairs = [(np.ones((4, 4)), np.ones((4, 4)))]
    ring = np.zeros((4, 4))
    ring[0, :] = ring[:, 0] = 0.9
    pairs.append((ring, np.full((4, 4), 0.7)))
    while len(pairs) < n:
        p = np.round(g.random((4, 4)) * 10) / 10
        q = np.clip(p + np.round(g.normal(0, 0.3, (4, 4)) * 10) / 10, 0, 1)
        pairs.append((p, q))
    return pairs


grids = arrays(np.float64, (12, 12), elements=st.floats(0, 1))


def test_zero_on_identical():
    a = np.random.default_rng(1).random((16, 16))
    report = evaluate(a, a)
    assert (report.sad, report.mse, report.grad, report.conn) == (0.0, 0.0, 0.0, 0.0)


def test_sad_mse_examples():
    assert sad(np.ones((10, 10)), np.zeros((10, 10))) == pytest.approx(0.1, abs=1e-15)
    assert mse(np.full((5, 5), 0.6), np.full((5, 5), 0.5)) == pytest.approx(0.01, abs=1e-15)


def test_sad_mse_loop_oracles():
    g = np.random.default_rng(2)
    for _ in range(20):
        p, q = g.random((9, 11)), g.random((9, 11))
        assert abs(sad(p, q) - loop_sad(p, q)) < 1e-9
        assert abs(mse(p, q) - loop_mse(p, q)) < 1e-9


def test_shape_mismatch():
    for fn in (sad, mse, grad_error, conn_error):
        with pytest.raises(ShapeError):
            fn(np.zeros((6, 6)), np.zeros((6, 7)))


def test_grad_constant_grids():
    assert grad_error(np.zeros((12, 12)), np.ones((12, 12))) == pytest.approx(0.0, abs=1e-12)


def test_grad_step_vs_smooth_edge_reference():
    x = np.arange(8)
    step = np.tile((x >= 4).astype(float), (8, 1))
    smooth = np.tile(np.clip((x - 2.0) / 4.0, 0, 1), (8, 1))
    assert grad_error(step, smooth) == pytest.approx(reference_grad(step, smooth), rel=1e-10)


def test_grad_random_reference():
    g = np.random.default_rng(3)
    p, q = g.random((9, 10)), g.random((9, 10))
    assert grad_error(p, q) == pytest.approx(reference_grad(p, q), rel=1e-10)


def test_grad_border_of_constant_is_flat():
    a = np.full((12, 12), 0.4)
    b = a.copy()
    b[5, 5] = 0.9
    assert grad_error(a, a + 0.5) == pytest.approx(0.0, abs=1e-12)
    assert grad_error(a, b) > 0


def test_conn_equal_components_both_kept():
    # two disjoint 2-pixel blobs of equal size: the result is mirror symmetric
    p = np.zeros((4, 4))
    p[0, :2] = p[3, 2:] = 1.0
    q = np.full((4, 4), 0.95)
    assert conn_error(p, q) == conn_error(p[::-1, ::-1], q[::-1, ::-1]) == brute_conn(p, q)


def test_grad_too_small():
    with pytest.raises(DomainError):
        grad_error(np.zeros((3, 3)), np.zeros((3, 3)))


def test_conn_all_ones():
    assert conn_error(np.ones((6, 6)), np.ones((6, 6))) == 0.0


def test_conn_matches_brute_force():
    for p, q in crafted_pairs():
        assert conn_error(p, q) == brute_conn(p, q)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_largest_component_backends(backend):
    impl = kernels.get_backend(backend)
    g = np.random.default_rng(4)
    for _ in range(20):
        mask = (g.random((7, 8)) < 0.55).astype(np.uint8)
        comps = _components(mask.astype(bool))
        expected = np.zeros(mask.shape, bool)
        top = max((len(c) for c in comps), default=0)
        for c in comps:
            if len(c) == top:
                for y, x in c:
                    expected[y, x] = True
        np.testing.assert_array_equal(impl.largest_component(mask), expected)


@settings(max_examples=25)
@given(grids, grids)
def test_symmetry_and_flip(p, q):
    assert sad(p, q) == sad(q, p)
    assert mse(p, q) == mse(q, p)
    assert grad_error(p, q) == pytest.approx(grad_error(q, p), rel=1e-12, abs=1e-15)
    for fn in (sad, mse, grad_error, conn_error):
        assert fn(p[:, ::-1], q[:, ::-1]) == pytest.approx(fn(p, q), rel=1e-9, abs=1e-12)


@settings(max_examples=25)
@given(grids)
def test_self_distance_zero(p):
    r = evaluate(p, p)
    assert (r.sad, r.mse, r.grad, r.conn) == (0.0, 0.0, 0.0, 0.0)


def test_sad_scales_with_pixel_count():
    assert sad(np.full((20, 20), 0.3), np.zeros((20, 20))) == pytest.approx(
        4 * sad(np.full((10, 10), 0.3), np.zeros((10, 10))), rel=1e-12)


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
@settings(max_examples=60)
@given(shape=st.tuples(st.integers(1, 24), st.integers(1, 24)), density=st.floats(0, 1),
       seed=st.integers(0, 2**16))
def test_largest_component_compiled_matches_python(shape, density, seed):
    mask = (np.random.default_rng(seed).random(shape) < density).astype(np.uint8)
    np.testing.assert_array_equal(kernels.get_backend("compiled").largest_component(mask),
                                  kernels.get_backend("python").largest_component(mask))
