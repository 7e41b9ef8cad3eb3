# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: submanifold neighbour tables, site convolution, and
largest 4-connected component.  ``_kernels_py`` mirrors every function."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def build_neighbors(const cnp.int64_t[:, ::1] index_grid, const cnp.int64_t[:, ::1] coords, int k):
    cdef Py_ssize_t n = coords.shape[0]
    cdef Py_ssize_t h = index_grid.shape[0], w = index_grid.shape[1]
    cdef int r = k // 2
    cdef Py_ssize_t i, y, x, yy, xx
    cdef int dy, dx, t
    out = np.full((n, k * k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] nbr = out
    for i in range(n):
        y = coords[i, 0]
        x = coords[i, 1]
        t = 0
        for dy in range(-r, r + 1):
            yy = y + dy
            for dx in range(-r, r + 1):
                xx = x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    nbr[i, t] = index_grid[yy, xx]
                t += 1
    return out


def subm_conv(const floating[:, ::1] feat, const cnp.int64_t[:, ::1] nbr,
              const floating[:, :, ::1] weight, const floating[::1] bias):
    """Site-wise convolution: ``out[i] = bias + sum_t weight[t].T @ feat[nbr[i, t]]``.

    ``weight`` is laid out (taps, C_in, C_out); missing neighbours are -1.
    """
    cdef Py_ssize_t n = feat.shape[0], cin = feat.shape[1]
    cdef Py_ssize_t taps = weight.shape[0], cout = weight.shape[2]
    cdef Py_ssize_t i, t, c, o
    cdef cnp.int64_t j
    cdef floating v
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, cout), dtype=dtype)
    cdef floating[:, ::1] res = out
    for i in range(n):
        for o in range(cout):
            res[i, o] = bias[o]
        for t in range(taps):
            j = nbr[i, t]
            if j < 0:
                continue
            for c in range(cin):
                v = feat[j, c]
                if v == 0:
                    continue
                for o in range(cout):
                    res[i, o] += v * weight[t, c, o]
    return out


cdef inline cnp.int32_t _find(cnp.int32_t* parent, cnp.int32_t a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]  # path halving
        a = parent[a]
    return a


def largest_component(const cnp.uint8_t[:, ::1] mask):
    """Largest 4-connected component of a binary grid.

    Two raster passes with union-find over provisional labels.  When several
    components share the maximal size their union is returned, which keeps
    the result independent of scan order (and so of flips).
    """
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    if h == 0 or w == 0:
        return out_arr.view(bool)
    labels_arr = np.zeros((h, w), dtype=np.int32)
    # provisional labels start at 1; at most one new label per pixel
    parent_arr = np.zeros(h * w + 1, dtype=np.int32)
    sizes_arr = np.zeros(h * w + 1, dtype=np.int64)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    cdef cnp.int32_t[::1] parent_view = parent_arr
    cdef cnp.int64_t[::1] sizes = sizes_arr
    cdef cnp.uint8_t[:, ::1] out = out_arr
    # raw pointer: handing the memoryview to _find would touch its refcount per call
    cdef cnp.int32_t* parent = &parent_view[0]
    cdef Py_ssize_t y, x
    cdef cnp.int32_t left, up, a, b, next_label = 1
    cdef cnp.int64_t best = 0
    with nogil:
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    continue
                left = labels[y, x - 1] if x > 0 else 0
                up = labels[y - 1, x] if y > 0 else 0
                if left == 0 and up == 0:
                    parent[next_label] = next_label
                    labels[y, x] = next_label
                    next_label += 1
                elif up == 0:
                    labels[y, x] = left
                elif left == 0 or left == up:
                    labels[y, x] = up
                else:
                    a = _find(parent, left)
                    b = _find(parent, up)
                    if a < b:
                        parent[b] = a
                    elif b < a:
                        parent[a] = b
                    labels[y, x] = a if a < b else b
        for y in range(h):
            for x in range(w):
                if labels[y, x]:
                    a = _find(parent, labels[y, x])
                    labels[y, x] = a
                    sizes[a] += 1
                    if sizes[a] > best:
                        best = sizes[a]
        for y in range(h):
            for x in range(w):
                if labels[y, x] and sizes[labels[y, x]] == best:
                    out[y, x] = 1
    return out_arr.view(bool)
