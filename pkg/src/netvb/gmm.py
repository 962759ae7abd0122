"""Per-node Gaussian-mixture computations.

Each network node alternates two local moves on its own data:

* a VBE step producing responsibilities r[j, k] ∝ exp(ln ρ[j, k]) with

      ln ρ[j, k] = E[ln π_k] + ½ E[ln|Λ_k|] − (D/2) ln 2π
                   − ½ (D/β_k + ν_k (x_j − m_k)ᵀ W_k (x_j − m_k)),

  the expectations taken under the current posterior, rows normalized by a
  max-shifted exponentiation; and

* the optimum of its local variational objective, in which the node's data is
  replicated N times (N = node count) so the local posterior carries
  full-network weight:

      R_k = N Σ_j r[j, k],  x̄_k = (N / R_k) Σ_j r[j, k] x_j,
      α_k = α0 + R_k,  β_k = β0 + R_k,  ν_k = ν0 + R_k,
      m_k = (β0 μ0 + R_k x̄_k) / β_k,
      W_k⁻¹ = W0⁻¹ + R_k S_k + (β0 R_k / (β0 + R_k)) (x̄_k − μ0)(x̄_k − μ0)ᵀ.

An empty component (R_k = 0) reproduces its prior exactly. Both moves are
pure functions and deterministic, so per-node evaluation order never matters.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels
from .expfam import (
    DomainError,
    GlobalNaturalParams,
    GmmHyperParams,
    hyper_to_natural,
    natural_to_hyper,
)
from .special import digamma

__all__ = [
    "GmmModelConfig",
    "NodeDataset",
    "Responsibilities",
    "local_vbm_optimum",
    "make_model",
    "vbe_coefficients",
    "vbe_step",
    "vbm_from_moments",
    "vbm_precision_from_moments",
]

_LOG_2 = float(np.log(2.0))
_LOG_2PI = float(np.log(2.0 * np.pi))


class GmmModelConfig(NamedTuple):
    """Mixture size, data dimension, replication factor and shared priors."""

    K: int
    D: int
    N: int
    priors: GmmHyperParams


class NodeDataset(NamedTuple):
    """One node's local observations, shape (N_i, D); empty nodes are legal."""

    points: np.ndarray
    node_id: int = 0


class Responsibilities(NamedTuple):
    """Per-point component posteriors, shape (N_i, K); rows sum to one."""

    r: np.ndarray


def make_model(
    K: int,
    D: int,
    num_nodes: int,
    *,
    alpha0: float = 1.0,
    beta0: float = 1.0,
    nu0: float | None = None,
    m0=None,
    w0=None,
) -> GmmModelConfig:
    """Build a model config with weak, scale-neutral default priors.

    Defaults: alpha0 = 1, mu0 = 0, beta0 = 1, W0 = I/D, nu0 = D. All priors
    are validated and replicated across the K components.
    """
    if K < 1 or D < 1 or num_nodes < 1:
        raise ValueError("K, D and num_nodes must all be at least 1")
    nu0 = float(D) if nu0 is None else float(nu0)
    m0 = np.zeros(D) if m0 is None else np.asarray(m0, dtype=np.float64)
    w0 = np.eye(D) / D if w0 is None else np.asarray(w0, dtype=np.float64)
    if m0.shape != (D,) or w0.shape != (D, D):
        raise ValueError("prior mean/scale shapes do not match D")
    priors = GmmHyperParams(
        alpha=np.full(K, float(alpha0)),
        m=np.tile(m0, (K, 1)),
        beta=np.full(K, float(beta0)),
        W=np.tile(w0, (K, 1, 1)),
        nu=np.full(K, nu0),
    )
    hyper_to_natural(priors)  # validates the prior domain
    return GmmModelConfig(K=K, D=D, N=num_nodes, priors=priors)


def _as_points(data, D: int) -> np.ndarray:
    x = data.points if isinstance(data, NodeDataset) else data
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != D:
        raise ValueError(f"points must be (N_i, {D}), got {x.shape}")
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("points contain non-finite entries")
    return x


def vbe_coefficients(alpha, m, beta, W, nu):
    """Constant and quadratic pieces of ln ρ for hyper arrays batched (..., K).

    Returns (coef, H) with ln ρ[j, k] = coef[k] − ½ (x_j − m_k)ᵀ H_k (x_j − m_k)
    and H_k = ν_k W_k.
    """
    D = m.shape[-1]
    e_log_pi = digamma(alpha) - np.asarray(digamma(np.sum(alpha, axis=-1)))[..., None]
    _, logdet_w = np.linalg.slogdet(W)
    j = np.arange(1, D + 1, dtype=np.float64)
    e_logdet = (
        np.sum(digamma(0.5 * (nu[..., None] + 1.0 - j)), axis=-1)
        + D * _LOG_2
        + logdet_w
    )
    coef = e_log_pi + 0.5 * e_logdet - 0.5 * D * _LOG_2PI - 0.5 * D / beta
    return coef, nu[..., None, None] * W


def vbe_step(data, phi: GlobalNaturalParams, cfg: GmmModelConfig) -> Responsibilities:
    """Posterior responsibilities of every local point under phi."""
    x = _as_points(data, cfg.D)
    if phi.num_components != cfg.K:
        raise ValueError("phi component count does not match the model")
    hyper = natural_to_hyper(phi)  # raises DomainError outside the domain
    coef, H = vbe_coefficients(*hyper._replace(W=np.ascontiguousarray(hyper.W)))
    offsets = np.array([0, x.shape[0]], dtype=np.int64)
    r, _, _, _ = kernels.fused_resp_moments(
        x,
        offsets,
        np.ascontiguousarray(coef[None]),
        np.ascontiguousarray(hyper.m[None]),
        np.ascontiguousarray(H[None]),
    )
    return Responsibilities(r=r)


def _check_responsibilities(r, n_points: int, K: int) -> np.ndarray:
    rr = np.asarray(r.r if isinstance(r, Responsibilities) else r, dtype=np.float64)
    if rr.shape != (n_points, K):
        raise ValueError(f"responsibilities must be ({n_points}, {K}), got {rr.shape}")
    if rr.size:
        if not np.all(np.isfinite(rr)):
            raise ValueError("responsibilities contain non-finite entries")
        if rr.min() < -1e-12 or rr.max() > 1.0 + 1e-12:
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(rr.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("responsibilities must be row-stochastic")
    return rr


def vbm_precision_from_moments(cfg: GmmModelConfig, s0, s1, s2):
    """Replicated-data VBM update from weighted moments, batched over nodes.

    s0 (..., K), s1 (..., K, D), s2 (..., K, D, D) are the responsibility-
    weighted sums of 1, x and x xᵀ on the local data. Returns
    (alpha, m, beta, W⁻¹, nu) with the same batch shape; the precision-side
    matrix is what the update produces natively.
    """
    alpha0, m0, beta0, w0, nu0 = cfg.priors
    n_repl = float(cfg.N)
    R = n_repl * s0
    alpha = alpha0 + R
    beta = beta0 + R
    nu = nu0 + R
    m = (beta0[:, None] * m0 + n_repl * s1) / beta[..., None]
    s0_safe = np.where(s0 > 0.0, s0, 1.0)
    xbar = s1 / s0_safe[..., None]
    scatter = n_repl * (
        s2 - s1[..., :, None] * s1[..., None, :] / s0_safe[..., None, None]
    )
    dev = xbar - m0
    cross = (beta0 * R / (beta0 + R))[..., None, None] * (
        dev[..., :, None] * dev[..., None, :]
    )
    w_inv0 = np.linalg.inv(w0)
    w_inv0 = 0.5 * (w_inv0 + np.swapaxes(w_inv0, -1, -2))
    w_inv = w_inv0 + scatter + cross
    return alpha, m, beta, 0.5 * (w_inv + np.swapaxes(w_inv, -1, -2)), nu


def vbm_from_moments(cfg: GmmModelConfig, s0, s1, s2):
    """Same update as :func:`vbm_precision_from_moments` but returns W."""
    alpha, m, beta, w_inv, nu = vbm_precision_from_moments(cfg, s0, s1, s2)
    W = np.linalg.inv(w_inv)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return alpha, m, beta, W, nu


def local_vbm_optimum(data, r, cfg: GmmModelConfig) -> GlobalNaturalParams:
    """Optimum of the node's local objective with N-fold data replication."""
    x = _as_points(data, cfg.D)
    rr = _check_responsibilities(r, x.shape[0], cfg.K)
    s0 = rr.sum(axis=0)
    s1 = rr.T @ x
    s2 = np.einsum("jk,ju,jv->kuv", rr, x, x)
    alpha, m, beta, W, nu = vbm_from_moments(cfg, s0, s1, s2)
    return hyper_to_natural(GmmHyperParams(alpha, m, beta, W, nu))
