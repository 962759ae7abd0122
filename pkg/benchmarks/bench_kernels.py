"""Benchmark the responsibility/moment kernel: compiled extension vs numpy.

The fused kernel (soft assignments plus the three weighted moment sums for
every node) dominates experiment runtime, so this script times both backends
on representative workloads, checks they agree, and reports the speedup.

Run from a checkout with the package installed::

    python3 benchmarks/bench_kernels.py [--loops N] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from netvb import gmm, harness as hz
from netvb import _kernels_py
from netvb.expfam import flat_to_hyper_arrays, flatten

try:
    from netvb import _kernels
except ImportError:
    _kernels = None

WORKLOADS = [
    # (label, nodes, points per node, K, D)
    ("experiment-scale (50 nodes x 100 pts, K=3, D=2)", 50, 100, 3, 2),
    ("wide network (100 nodes x 100 pts, K=3, D=2)", 100, 100, 3, 2),
    ("heavy nodes (20 nodes x 2000 pts, K=5, D=3)", 20, 2000, 5, 3),
]


def build_inputs(n_nodes: int, per_node: int, K: int, D: int, seed: int = 0):
    """Assemble realistic kernel inputs from a seeded synthetic experiment."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=4.0, size=(K, D))
    covs = np.stack([np.eye(D) * s for s in rng.uniform(0.4, 1.2, size=K)])
    spec = hz.make_synthetic_spec(
        np.full(K, 1.0 / K), means, covs, np.full(n_nodes, per_node), seed=seed
    )
    ds = hz.generate_synthetic(spec)
    model = gmm.make_model(K, D, n_nodes)
    init = hz.initial_states(model, ds.points, n_nodes, seed)
    phi = np.stack([flatten(p) for p in init])
    alpha, m, beta, W, nu = flat_to_hyper_arrays(phi, K, D)
    coef, H = gmm.vbe_coefficients(alpha, m, beta, W, nu)
    offsets = np.arange(n_nodes + 1, dtype=np.int64) * per_node
    x_all = np.ascontiguousarray(ds.points)
    return (
        x_all,
        offsets,
        np.ascontiguousarray(coef),
        np.ascontiguousarray(m),
        np.ascontiguousarray(H),
    )


def time_call(fn, args, loops: int, repeats: int) -> float:
    """Best-of-repeats mean seconds per call."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def agreement(a, b) -> float:
    return max(float(np.abs(x - y).max()) if x.size else 0.0 for x, y in zip(a, b))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--loops", type=int, default=20, help="calls per timing sample")
    ap.add_argument("--repeats", type=int, default=5, help="timing samples (best kept)")
    ns = ap.parse_args()

    if _kernels is None:
        print("compiled extension not built; timing the numpy backend only")

    for label, n_nodes, per_node, K, D in WORKLOADS:
        args = build_inputs(n_nodes, per_node, K, D)
        t_py = time_call(_kernels_py.fused_resp_moments, args, ns.loops, ns.repeats)
        line = f"{label}\n  numpy    {t_py * 1e3:8.3f} ms/call"
        if _kernels is not None:
            t_c = time_call(_kernels.fused_resp_moments, args, ns.loops, ns.repeats)
            diff = agreement(
                _kernels.fused_resp_moments(*args), _kernels_py.fused_resp_moments(*args)
            )
            line += (
                f"\n  compiled {t_c * 1e3:8.3f} ms/call"
                f"\n  speedup  {t_py / t_c:8.2f}x   (max backend difference {diff:.3e})"
            )
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
