"""Numba kernels for tile binning, front-to-back compositing and its adjoint.

Splat arrays are already sorted by depth. Features are packed per Gaussian as
``[r, g, b, seg0, seg1, seg2, 1]``; the trailing constant composites to the mask.
"""
import math
import warnings

import numpy as np
from numba import njit, prange

warnings.filterwarnings("ignore", message="The TBB threading layer")

TILE = 16
BLOCK = 4  # pixels; each tile's list is filtered once per BLOCK x BLOCK sub-block
ALPHA_MAX = 0.999


@njit(cache=True)
def bin_tiles(means, radii, width, height, tiles_x, tiles_y):
    """Return (tile_start, tile_gauss): per-tile ranges of sorted splat indices, depth order kept."""
    n = means.shape[0]
    n_tiles = tiles_x * tiles_y
    x0 = np.empty(n, np.int64)
    x1 = np.empty(n, np.int64)
    y0 = np.empty(n, np.int64)
    y1 = np.empty(n, np.int64)
    counts = np.zeros(n_tiles + 1, np.int64)
    for i in range(n):
        r = radii[i]
        x0[i] = max(0, min(tiles_x, int(math.floor((means[i, 0] - r) / TILE))))
        x1[i] = max(0, min(tiles_x, int(math.floor((means[i, 0] + r) / TILE)) + 1))
        y0[i] = max(0, min(tiles_y, int(math.floor((means[i, 1] - r) / TILE))))
        y1[i] = max(0, min(tiles_y, int(math.floor((means[i, 1] + r) / TILE)) + 1))
        for ty in range(y0[i], y1[i]):
            for tx in range(x0[i], x1[i]):
                counts[ty * tiles_x + tx + 1] += 1
    for t in range(n_tiles):
        counts[t + 1] += counts[t]
    fill = counts[:-1].copy()
    tile_gauss = np.empty(counts[-1], np.int64)
    for i in range(n):
        for ty in range(y0[i], y1[i]):
            for tx in range(x0[i], x1[i]):
                t = ty * tiles_x + tx
                tile_gauss[fill[t]] = i
                fill[t] += 1
    return counts, tile_gauss


@njit(cache=True)
def _block_list(means, radii, tile_gauss, s0, s1, bx, by, out):
    """Positions k in [s0, s1) whose splat extent reaches the block at pixel (bx, by); depth order kept."""
    n = 0
    x_lo = bx
    x_hi = bx + BLOCK
    y_lo = by
    y_hi = by + BLOCK
    for k in range(s0, s1):
        g = tile_gauss[k]
        r = radii[g]
        if means[g, 0] + r >= x_lo and means[g, 0] - r <= x_hi and means[g, 1] + r >= y_lo and means[g, 1] - r <= y_hi:
            out[n] = k
            n += 1
    return n


@njit(cache=True, parallel=True)
def forward_tiled(means, radii, conics, opac, feats, bg, tile_start, tile_gauss, width, height, tiles_x, t_min,
                  out, final_t, n_contrib):
    nf = feats.shape[1]
    n_tiles = tile_start.shape[0] - 1
    for t in prange(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        sub = np.empty(s1 - s0, np.int64)
        acc = np.empty(nf)
        for by in range(ty * TILE, min(ty * TILE + TILE, height), BLOCK):
            for bx in range(tx * TILE, min(tx * TILE + TILE, width), BLOCK):
                n_sub = _block_list(means, radii, tile_gauss, s0, s1, bx, by, sub)
                for py in range(by, min(by + BLOCK, height)):
                    for px in range(bx, min(bx + BLOCK, width)):
                        _forward_pixel(px, py, means, conics, opac, feats, bg, tile_gauss, sub, n_sub, t_min,
                                       acc, out, final_t, n_contrib)


@njit(cache=True)
def _forward_pixel(px, py, means, conics, opac, feats, bg, tile_gauss, sub, n_sub, t_min, acc, out, final_t,
                   n_contrib):
    nf = feats.shape[1]
    cx = px + 0.5
    cy = py + 0.5
    trans = 1.0
    count = 0
    for c in range(nf):
        acc[c] = 0.0
    for j in range(n_sub):
        if trans < t_min:
            break
        g = tile_gauss[sub[j]]
        dx = cx - means[g, 0]
        dy = cy - means[g, 1]
        power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) - conics[g, 1] * dx * dy
        alpha = opac[g] * math.exp(power)
        if alpha > ALPHA_MAX:
            alpha = ALPHA_MAX
        w = alpha * trans
        for c in range(nf):
            acc[c] += w * feats[g, c]
        trans = trans * (1.0 - alpha)
        count += 1
    for c in range(nf):
        out[py, px, c] = acc[c] + trans * bg[c]
    final_t[py, px] = trans
    n_contrib[py, px] = count


@njit(cache=True)
def forward_reference(means, conics, opac, feats, bg, width, height, out, final_t):
    # Gaussian-outer / pixel-inner order keeps the inner loops contiguous; the
    # per-pixel arithmetic is identical to the tiled kernel.
    nf = feats.shape[1]
    n = means.shape[0]
    npx = width * height
    trans = np.ones(npx)
    xs = np.empty(npx)
    ys = np.empty(npx)
    for p in range(npx):
        xs[p] = p % width + 0.5
        ys[p] = p // width + 0.5
    acc = np.zeros((nf, npx))
    w = np.empty(npx)
    for g in range(n):
        a = conics[g, 0]
        b = conics[g, 1]
        c = conics[g, 2]
        mx = means[g, 0]
        my = means[g, 1]
        o = opac[g]
        for p in range(npx):
            dx = xs[p] - mx
            dy = ys[p] - my
            alpha = o * math.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy)
            if alpha > ALPHA_MAX:
                alpha = ALPHA_MAX
            w[p] = alpha * trans[p]
            trans[p] = trans[p] * (1.0 - alpha)
        for ch in range(nf):
            f = feats[g, ch]
            for p in range(npx):
                acc[ch, p] += w[p] * f
    for p in range(npx):
        for ch in range(nf):
            out[p // width, p % width, ch] = acc[ch, p] + trans[p] * bg[ch]
        final_t[p // width, p % width] = trans[p]


@njit(cache=True, parallel=True)
def backward_tiled(means, radii, conics, opac, feats, bg, tile_start, tile_gauss, width, height, tiles_x,
                   n_contrib, grad_out, pair_grad):
    """Per (tile, splat) pair gradients: [mean x, mean y, conic a, b, c, opacity, features...]."""
    nf = feats.shape[1]
    n_tiles = tile_start.shape[0] - 1
    for t in prange(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        alphas = np.empty(s1 - s0)
        transs = np.empty(s1 - s0)
        gausses = np.empty(s1 - s0)
        acc = np.empty(nf)
        sub = np.empty(s1 - s0, np.int64)
        for by in range(ty * TILE, min(ty * TILE + TILE, height), BLOCK):
            for bx in range(tx * TILE, min(tx * TILE + TILE, width), BLOCK):
                _block_list(means, radii, tile_gauss, s0, s1, bx, by, sub)
                for py in range(by, min(by + BLOCK, height)):
                    for px in range(bx, min(bx + BLOCK, width)):
                        _backward_pixel(px, py, means, conics, opac, feats, bg, tile_gauss, sub, n_contrib,
                                        grad_out, pair_grad, alphas, transs, gausses, acc)


@njit(cache=True)
def _backward_pixel(px, py, means, conics, opac, feats, bg, tile_gauss, sub, n_contrib, grad_out, pair_grad,
                    alphas, transs, gausses, acc):
    nf = feats.shape[1]
    cx = px + 0.5
    cy = py + 0.5
    count = n_contrib[py, px]
    trans = 1.0
    # replay the forward pass; a negative gauss marks a clamped alpha (no geometry gradient)
    for j in range(count):
        g = tile_gauss[sub[j]]
        dx = cx - means[g, 0]
        dy = cy - means[g, 1]
        power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) - conics[g, 1] * dx * dy
        gauss = math.exp(power)
        alpha = opac[g] * gauss
        if alpha > ALPHA_MAX:
            alpha = ALPHA_MAX
            gauss = -1.0
        alphas[j] = alpha
        gausses[j] = gauss
        transs[j] = trans
        trans = trans * (1.0 - alpha)
    for c in range(nf):
        acc[c] = bg[c]
    for j in range(count - 1, -1, -1):
        k = sub[j]
        g = tile_gauss[k]
        alpha = alphas[j]
        tr = transs[j]
        d_alpha = 0.0
        for c in range(nf):
            go = grad_out[py, px, c]
            pair_grad[k, 6 + c] += alpha * tr * go
            d_alpha += go * (feats[g, c] - acc[c])
            acc[c] = feats[g, c] * alpha + (1.0 - alpha) * acc[c]
        gauss = gausses[j]
        if gauss < 0.0:
            continue
        d_alpha *= tr
        dx = cx - means[g, 0]
        dy = cy - means[g, 1]
        pair_grad[k, 5] += d_alpha * gauss
        d_power = d_alpha * alpha
        pair_grad[k, 0] += d_power * (conics[g, 0] * dx + conics[g, 1] * dy)
        pair_grad[k, 1] += d_power * (conics[g, 2] * dy + conics[g, 1] * dx)
        pair_grad[k, 2] += -0.5 * d_power * dx * dx
        pair_grad[k, 3] += -d_power * dx * dy
        pair_grad[k, 4] += -0.5 * d_power * dy * dy


@njit(cache=True)
def reduce_pairs(tile_gauss, pair_grad, n):
    out = np.zeros((n, pair_grad.shape[1]), pair_grad.dtype)
    for k in range(tile_gauss.shape[0]):
        g = tile_gauss[k]
        for c in range(pair_grad.shape[1]):
            out[g, c] += pair_grad[k, c]
    return out
