"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np
from scipy import ndimage


def build_neighbors(index_grid, coords, k):
    h, w = index_grid.shape
    r = k // 2
    padded = np.full((h + 2 * r, w + 2 * r), -1, dtype=np.int64)
    padded[r:r + h, r:r + w] = index_grid
    ys, xs = coords[:, 0], coords[:, 1]
    cols = [padded[ys + r + dy, xs + r + dx]
            for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    return np.stack(cols, axis=1) if cols else np.empty((0, k * k), dtype=np.int64)


def subm_conv(feat, nbr, weight, bias):
    n = feat.shape[0]
    out = np.broadcast_to(bias, (n, weight.shape[2])).astype(feat.dtype, copy=True)
    for t in range(weight.shape[0]):
        j = nbr[:, t]
        hit = j >= 0
        if hit.any():
            out[hit] += feat[j[hit]] @ weight[t]
    return out


_FOUR = ndimage.generate_binary_structure(2, 1)


def largest_component(mask):
    labels, count = ndimage.label(mask, structure=_FOUR)
    if count == 0:
        return np.zeros(mask.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    # equal-size maxima are all kept so the result does not depend on scan order
    return (sizes == sizes.max())[labels]
