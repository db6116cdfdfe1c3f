"""Time the node2vec kernels under numba and under the numpy fallback.

Both flavours run in one process: the fallback functions are called directly
and the compiled ones are built with ``_accel.jit``. Compilation happens in a
warm-up call that is excluded from the timings.

    python benchmarks/bench_node2vec.py [--districts 24] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from deepsta import _accel, _kernels
from deepsta import node2vec as nv
from deepsta.graphs import build_district_graph
from deepsta.scenario import ScenarioConfig, _road_grid


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--districts", type=int, default=24)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    net, cent, _ = _road_grid(args.districts, ScenarioConfig(n_districts=args.districts), np.random.default_rng(0))
    weights = build_district_graph(net, cent).weights
    cfg = nv.WalkConfig()
    g = nv.AliasGraph(weights, cfg.p, cfg.q)
    n = g.n_nodes
    starts = np.tile(np.arange(n, dtype=np.int64), cfg.walks_per_node)
    uniforms = np.stack([nv.walk_uniforms(cfg.seed, int(v), k // n, cfg.walk_length) for k, v in enumerate(starts)])
    walk_args = (g.indptr, g.indices, g.node_prob, g.node_alias, g.edge_off, g.edge_prob, g.edge_alias,
                 starts, uniforms, cfg.walk_length)

    walks = _kernels.walks_loop(*walk_args)
    centers, contexts = nv.skipgram_pairs(walks, cfg.window_size)
    rng = np.random.default_rng(1)
    negatives = rng.choice(n, size=(len(centers), cfg.negative_samples), p=nv.negative_distribution(walks, n))
    syn0 = (rng.random((n, cfg.embedding_dim)) - 0.5) / cfg.embedding_dim

    def sgns(kernel):
        return lambda: kernel(syn0.copy(), np.zeros_like(syn0), centers, contexts, negatives, cfg.lr, cfg.lr / 2)

    rows = [("walks", lambda: _kernels.walks_loop(*walk_args)),
            ("sgns_epoch", sgns(_kernels.sgns_epoch_numpy))]
    fast = {}
    if _accel.numba is not None:
        jw, js = _accel.jit(_kernels.walks_loop), _accel.jit(_kernels.sgns_epoch_loop)
        jw(*walk_args)
        sgns(js)()
        fast = {"walks": lambda: jw(*walk_args), "sgns_epoch": sgns(js)}

    print(f"{n} districts, {len(walks)} walks, {len(centers)} skip-gram pairs per epoch")
    print(f"{'kernel':<12}{'numpy s':>12}{'numba s':>12}{'speed-up':>10}")
    for name, slow in rows:
        t_slow = best_of(slow, args.repeats)
        if name in fast:
            t_fast = best_of(fast[name], args.repeats)
            print(f"{name:<12}{t_slow:>12.4f}{t_fast:>12.4f}{t_slow / t_fast:>9.1f}x")
        else:
            print(f"{name:<12}{t_slow:>12.4f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
