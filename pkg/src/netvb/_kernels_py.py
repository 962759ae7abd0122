"""Pure-numpy twin of the compiled kernel.

Same contract as ``netvb._kernels.fused_resp_moments``; used when the
extension is not built or when ``NETVB_KERNEL=python``. Per-node sums are
accumulated in point order (bincount is sequential), matching the compiled
path to float rounding.
"""

from __future__ import annotations

import numpy as np


def fused_resp_moments(x, offsets, coef, m, H):
    n, K = coef.shape
    P, D = x.shape
    node_of = np.repeat(np.arange(n), np.diff(offsets))

    diff = x[:, None, :] - m[node_of]
    quad = np.einsum("pkd,pkde,pke->pk", diff, H[node_of], diff, optimize=True)
    lnrho = coef[node_of] - 0.5 * quad
    lnrho -= lnrho.max(axis=1, keepdims=True)
    r = np.exp(lnrho)
    r /= r.sum(axis=1, keepdims=True)

    weighted = np.concatenate(
        [
            r,
            (r[:, :, None] * x[:, None, :]).reshape(P, K * D),
            (r[:, :, None, None] * (x[:, None, :, None] * x[:, None, None, :])).reshape(
                P, K * D * D
            ),
        ],
        axis=1,
    )
    sums = np.empty((n, weighted.shape[1]))
    for col in range(weighted.shape[1]):
        sums[:, col] = np.bincount(node_of, weights=weighted[:, col], minlength=n)

    s0 = sums[:, :K].copy()
    s1 = sums[:, K : K + K * D].reshape(n, K, D).copy()
    s2 = sums[:, K + K * D :].reshape(n, K, D, D).copy()
    return r, s0, s1, s2
