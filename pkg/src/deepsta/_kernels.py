"""Hot loops for node2vec: alias-table walks and skip-gram negative sampling.

Each kernel exists in two flavours. The ``*_loop`` functions are written in
the numba-compatible subset and get compiled when numba is enabled; the
``*_numpy`` fallbacks keep the same update order but lean on numpy vector ops.
All randomness is drawn up front by the caller, so both flavours consume the
same random numbers.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel


def walks_loop(indptr, indices, node_prob, node_alias, edge_off, edge_prob, edge_alias,
               starts, uniforms, walk_length):
    n_walks = starts.shape[0]
    walks = np.empty((n_walks, walk_length), dtype=np.int64)
    for w in range(n_walks):
        v = starts[w]
        walks[w, 0] = v
        e = -1
        for step in range(1, walk_length):
            cur = walks[w, step - 1]
            deg = indptr[cur + 1] - indptr[cur]
            if deg == 0:
                walks[w, step] = cur
                continue
            u1 = uniforms[w, step - 1, 0]
            u2 = uniforms[w, step - 1, 1]
            k = int(u1 * deg)
            if k >= deg:
                k = deg - 1
            if e < 0:
                off = indptr[cur]
                pos = k if u2 < node_prob[off + k] else node_alias[off + k]
            else:
                off = edge_off[e]
                pos = k if u2 < edge_prob[off + k] else edge_alias[off + k]
            e = indptr[cur] + pos
            walks[w, step] = indices[e]
    return walks


def sgns_epoch_loop(syn0, syn1, centers, contexts, negatives, lr_start, lr_end):
    n_pairs = centers.shape[0]
    dim = syn0.shape[1]
    k_neg = negatives.shape[1]
    neu1e = np.zeros(dim)
    total = 0.0
    for i in range(n_pairs):
        lr = lr_start + (lr_end - lr_start) * (i / n_pairs)
        w = centers[i]
        for d in range(dim):
            neu1e[d] = 0.0
        for j in range(k_neg + 1):
            if j == 0:
                target = contexts[i]
                label = 1.0
            else:
                target = negatives[i, j - 1]
                if target == contexts[i]:
                    continue
                label = 0.0
            f = 0.0
            for d in range(dim):
                f += syn0[w, d] * syn1[target, d]
            if f >= 0:
                s = 1.0 / (1.0 + math.exp(-f))
            else:
                ef = math.exp(f)
                s = ef / (1.0 + ef)
            if label == 1.0:
                total -= math.log(max(s, 1e-300))
            else:
                total -= math.log(max(1.0 - s, 1e-300))
            g = (label - s) * lr
            for d in range(dim):
                neu1e[d] += g * syn1[target, d]
                syn1[target, d] += g * syn0[w, d]
        for d in range(dim):
            syn0[w, d] += neu1e[d]
    return total / max(n_pairs, 1)


def sgns_epoch_numpy(syn0, syn1, centers, contexts, negatives, lr_start, lr_end):
    n_pairs = centers.shape[0]
    total = 0.0
    for i in range(n_pairs):
        lr = lr_start + (lr_end - lr_start) * (i / n_pairs)
        w = centers[i]
        c = contexts[i]
        v = syn0[w]
        neu1e = np.zeros_like(v)
        targets = [(c, 1.0)] + [(int(t), 0.0) for t in negatives[i] if t != c]
        for target, label in targets:
            u = syn1[target]
            f = float(v @ u)
            s = 1.0 / (1.0 + math.exp(-f)) if f >= 0 else math.exp(f) / (1.0 + math.exp(f))
            total -= math.log(max(s if label == 1.0 else 1.0 - s, 1e-300))
            g = (label - s) * lr
            neu1e += g * u
            u += g * v
        v += neu1e
    return total / max(n_pairs, 1)


if _accel.USE_NUMBA:
    walks = _accel.jit(walks_loop)
    sgns_epoch = _accel.jit(sgns_epoch_loop)
else:
    walks = walks_loop
    sgns_epoch = sgns_epoch_numpy
