"""Conjugate exponential-family machinery for Bayesian Gaussian mixtures.

The variational posterior of a K-component, D-dimensional Gaussian mixture
factorizes into one Dirichlet block over the mixing weights and one
normal-Wishart (NW) block per component, each a member of the exponential
family. Network algorithms exchange and combine these posteriors in natural
coordinates, where the family is closed under affine combination:

    Dirichlet:      eta = alpha - 1                      pairs with ln pi
    normal-Wishart: a = (nu - D) / 2                     pairs with ln|Λ|
                    B = -W⁻¹/2 - (beta/2) m mᵀ           pairs with Λ
                    c = beta m                           pairs with Λ mu
                    d = -beta/2                          pairs with muᵀ Λ mu

Log partitions omit parameter-independent constants. Every KL divergence here
is a difference of two log partitions of the same family plus an inner
product, so the omitted constants cancel exactly.

The flattened vector layout used for exchange and for all Euclidean geometry
on parameters is

    [ eta (K) | comp 0: a, triu(B), c, d | comp 1: ... | comp K-1: ... ]

with triu(B) the row-major upper triangle of B (length D(D+1)/2). The valid
domain Ω requires alpha > 0, beta > 0, nu > D - 1 and W⁻¹ symmetric positive
definite, all recovered from the natural coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .special import DomainError, digamma, log_gamma, trigamma

__all__ = [
    "DirichletNat",
    "DomainError",
    "GlobalNaturalParams",
    "GmmHyperParams",
    "NormalWishartNat",
    "NwExpectedStats",
    "ProjectionMargins",
    "digamma",
    "dirichlet_expected_log_pi",
    "dirichlet_log_partition",
    "flat_size",
    "flat_to_hyper_arrays",
    "flatten",
    "hyper_arrays_to_flat",
    "hyper_to_natural",
    "in_domain",
    "in_domain_flat",
    "join_flat",
    "kl_dirichlet",
    "kl_global",
    "kl_global_flat",
    "kl_normal_wishart",
    "log_gamma",
    "natural_to_hyper",
    "pack_sym",
    "project_flat",
    "split_flat",
    "unpack_sym",
    "nw_expected_stats",
    "nw_log_partition",
    "precision_arrays_to_flat",
    "project_to_domain",
    "trigamma",
    "unflatten",
]

_LOG_2 = float(np.log(2.0))


class DirichletNat(NamedTuple):
    """Dirichlet block in natural coordinates, eta = alpha - 1, shape (K,)."""

    eta: np.ndarray


class NormalWishartNat(NamedTuple):
    """One normal-Wishart block in natural coordinates.

    a is scalar, B is a symmetric (D, D) matrix, c has shape (D,) and d is
    scalar; see the module docstring for the hyperparameter map.
    """

    a: float
    B: np.ndarray
    c: np.ndarray
    d: float


class GlobalNaturalParams(NamedTuple):
    """Full mixture posterior: Dirichlet block plus one NW block per component."""

    dirichlet: DirichletNat
    components: tuple

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return int(np.asarray(self.components[0].c).shape[0])


class GmmHyperParams(NamedTuple):
    """Hyperparameter view of the same posterior.

    alpha (K,), m (K, D), beta (K,), W (K, D, D), nu (K,). Valid when
    alpha > 0, beta > 0, nu > D - 1 and every W[k] is symmetric positive
    definite.
    """

    alpha: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    W: np.ndarray
    nu: np.ndarray


class NwExpectedStats(NamedTuple):
    """Expected sufficient statistics of one NW block.

    e_log_det_lambda = E[ln|Λ|], e_lambda = E[Λ] = nu W,
    e_lambda_mu = E[Λ mu] = nu W m, e_mu_lambda_mu = E[muᵀ Λ mu]
    = D/beta + nu mᵀ W m.
    """

    e_log_det_lambda: float
    e_lambda: np.ndarray
    e_lambda_mu: np.ndarray
    e_mu_lambda_mu: float


@dataclass(frozen=True)
class ProjectionMargins:
    """Floors used when repairing a point that left the valid domain."""

    alpha: float = 1e-6
    beta: float = 1e-8
    nu: float = 1e-6
    eigen: float = 1e-8


# ---------------------------------------------------------------------------
# flattened layout
# ---------------------------------------------------------------------------


def flat_size(K: int, D: int) -> int:
    """Length of the flattened natural-parameter vector."""
    return K + K * (2 + D + D * (D + 1) // 2)


def _comp_size(D: int) -> int:
    return 2 + D + D * (D + 1) // 2


def pack_sym(M: np.ndarray) -> np.ndarray:
    """Row-major upper triangle of symmetric matrices, (..., D, D) -> (..., P)."""
    D = M.shape[-1]
    iu = np.triu_indices(D)
    return M[..., iu[0], iu[1]]


def unpack_sym(p: np.ndarray, D: int) -> np.ndarray:
    """Inverse of :func:`pack_sym`, (..., P) -> (..., D, D)."""
    iu = np.triu_indices(D)
    out = np.zeros(p.shape[:-1] + (D, D))
    out[..., iu[0], iu[1]] = p
    out[..., iu[1], iu[0]] = p
    return out


def split_flat(vec: np.ndarray, K: int, D: int):
    """Split (..., L) flattened vectors into (eta, a, B_packed, c, d) views."""
    P = D * (D + 1) // 2
    S = _comp_size(D)
    eta = vec[..., :K]
    comps = vec[..., K:].reshape(vec.shape[:-1] + (K, S))
    a = comps[..., 0]
    b_packed = comps[..., 1 : 1 + P]
    c = comps[..., 1 + P : 1 + P + D]
    d = comps[..., 1 + P + D]
    return eta, a, b_packed, c, d


def join_flat(eta, a, b_packed, c, d) -> np.ndarray:
    """Assemble flattened vectors from per-block arrays (inverse of split)."""
    K = eta.shape[-1]
    D = c.shape[-1]
    S = _comp_size(D)
    comps = np.empty(a.shape[:-1] + (K, S))
    P = D * (D + 1) // 2
    comps[..., 0] = a
    comps[..., 1 : 1 + P] = b_packed
    comps[..., 1 + P : 1 + P + D] = c
    comps[..., 1 + P + D] = d
    return np.concatenate(
        [eta, comps.reshape(a.shape[:-1] + (K * S,))], axis=-1
    )


def flatten(phi: GlobalNaturalParams) -> np.ndarray:
    """Flatten a structured posterior into the exchange layout, shape (L,)."""
    parts = [np.asarray(phi.dirichlet.eta, dtype=np.float64)]
    for comp in phi.components:
        parts.append(np.array([comp.a], dtype=np.float64))
        parts.append(pack_sym(np.asarray(comp.B, dtype=np.float64)))
        parts.append(np.asarray(comp.c, dtype=np.float64))
        parts.append(np.array([comp.d], dtype=np.float64))
    return np.concatenate(parts)


def unflatten(vec: np.ndarray, K: int, D: int) -> GlobalNaturalParams:
    """Rebuild the structured posterior from a flattened vector."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (flat_size(K, D),):
        raise ValueError(
            f"expected flattened vector of length {flat_size(K, D)}, got {vec.shape}"
        )
    eta, a, b_packed, c, d = split_flat(vec, K, D)
    comps = tuple(
        NormalWishartNat(
            a=float(a[k]),
            B=unpack_sym(b_packed[k], D),
            c=c[k].copy(),
            d=float(d[k]),
        )
        for k in range(K)
    )
    return GlobalNaturalParams(dirichlet=DirichletNat(eta=eta.copy()), components=comps)


# ---------------------------------------------------------------------------
# Dirichlet block
# ---------------------------------------------------------------------------


def _as_eta(block) -> np.ndarray:
    eta = block.eta if isinstance(block, DirichletNat) else block
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 1 or eta.size == 0:
        raise ValueError("eta must be a nonempty vector")
    if not np.all(eta > -1.0):
        raise DomainError("alpha nonpositive (every eta entry must exceed -1)")
    return eta


def dirichlet_log_partition(block) -> float:
    """ln B(alpha) = sum_k ln Γ(alpha_k) - ln Γ(sum_k alpha_k), alpha = eta + 1."""
    alpha = _as_eta(block) + 1.0
    return float(np.sum(log_gamma(alpha)) - log_gamma(np.sum(alpha)))


def dirichlet_expected_log_pi(block) -> np.ndarray:
    """E[ln pi_k] = ψ(alpha_k) - ψ(sum_j alpha_j), shape (K,)."""
    alpha = _as_eta(block) + 1.0
    return digamma(alpha) - digamma(float(np.sum(alpha)))


def kl_dirichlet(p, q) -> float:
    """KL(p ‖ q) between Dirichlet blocks in natural coordinates."""
    eta_p = _as_eta(p)
    eta_q = _as_eta(q)
    if eta_p.shape != eta_q.shape:
        raise ValueError("Dirichlet blocks differ in length")
    value = (
        float(np.dot(eta_p - eta_q, dirichlet_expected_log_pi(eta_p)))
        - dirichlet_log_partition(eta_p)
        + dirichlet_log_partition(eta_q)
    )
    return value


# ---------------------------------------------------------------------------
# normal-Wishart block
# ---------------------------------------------------------------------------


def _nw_recover(block: NormalWishartNat):
    """Recover (beta, m, nu, W_inv, W, logdet_W) from one NW block.

    Raises DomainError naming the offending field when the block lies outside
    the valid domain.
    """
    B = np.asarray(block.B, dtype=np.float64)
    c = np.asarray(block.c, dtype=np.float64)
    D = c.shape[0]
    if B.shape != (D, D):
        raise ValueError(f"B must be ({D}, {D}), got {B.shape}")
    if not np.allclose(B, B.T, rtol=1e-10, atol=1e-12):
        raise DomainError("B not symmetric")
    beta = -2.0 * float(block.d)
    if beta <= 0.0:
        raise DomainError("beta nonpositive")
    nu = 2.0 * float(block.a) + D
    if nu <= D - 1.0:
        raise DomainError("nu out of range (requires nu > D - 1)")
    m = c / beta
    w_inv = -2.0 * B - np.outer(c, c) / beta
    w_inv = 0.5 * (w_inv + w_inv.T)
    try:
        chol = np.linalg.cholesky(w_inv)
    except np.linalg.LinAlgError:
        raise DomainError("W^-1 not positive definite") from None
    logdet_w = -2.0 * float(np.sum(np.log(np.diagonal(chol))))
    W = np.linalg.inv(w_inv)
    W = 0.5 * (W + W.T)
    return beta, m, nu, w_inv, W, logdet_w


def nw_log_partition(block: NormalWishartNat) -> float:
    """Log partition of one NW block, parameter-independent constants omitted.

    A = -(D/2) ln beta + (nu/2) ln|W| + (nu D / 2) ln 2
        + sum_{j=1..D} ln Γ((nu + 1 - j)/2).
    """
    D = np.asarray(block.c).shape[0]
    beta, _, nu, _, _, logdet_w = _nw_recover(block)
    j = np.arange(1, D + 1, dtype=np.float64)
    return float(
        -0.5 * D * np.log(beta)
        + 0.5 * nu * logdet_w
        + 0.5 * nu * D * _LOG_2
        + np.sum(log_gamma(0.5 * (nu + 1.0 - j)))
    )


def nw_expected_stats(block: NormalWishartNat) -> NwExpectedStats:
    """Expected sufficient statistics of one NW block (see NwExpectedStats)."""
    D = np.asarray(block.c).shape[0]
    beta, m, nu, _, W, logdet_w = _nw_recover(block)
    j = np.arange(1, D + 1, dtype=np.float64)
    e_logdet = float(np.sum(digamma(0.5 * (nu + 1.0 - j))) + D * _LOG_2 + logdet_w)
    e_lambda = nu * W
    e_lambda_mu = e_lambda @ m
    e_mu_lambda_mu = float(D / beta + m @ e_lambda_mu)
    return NwExpectedStats(e_logdet, e_lambda, e_lambda_mu, e_mu_lambda_mu)


def kl_normal_wishart(p: NormalWishartNat, q: NormalWishartNat) -> float:
    """KL(p ‖ q) between NW blocks in natural coordinates.

    KL = (a_p - a_q) E_p[ln|Λ|] + tr((B_p - B_q) E_p[Λ])
         + (c_p - c_q)ᵀ E_p[Λ mu] + (d_p - d_q) E_p[muᵀ Λ mu] - A(p) + A(q).
    """
    if np.asarray(p.c).shape != np.asarray(q.c).shape:
        raise ValueError("NW blocks differ in dimension")
    stats = nw_expected_stats(p)
    value = (
        (float(p.a) - float(q.a)) * stats.e_log_det_lambda
        + float(np.sum((np.asarray(p.B) - np.asarray(q.B)) * stats.e_lambda))
        + float((np.asarray(p.c) - np.asarray(q.c)) @ stats.e_lambda_mu)
        + (float(p.d) - float(q.d)) * stats.e_mu_lambda_mu
        - nw_log_partition(p)
        + nw_log_partition(q)
    )
    return value


def kl_global(p: GlobalNaturalParams, q: GlobalNaturalParams) -> float:
    """KL(p ‖ q) of full mixture posteriors: Dirichlet KL plus per-component NW KLs."""
    if p.num_components != q.num_components:
        raise ValueError("posteriors differ in component count")
    value = kl_dirichlet(p.dirichlet, q.dirichlet)
    for comp_p, comp_q in zip(p.components, q.components):
        value += kl_normal_wishart(comp_p, comp_q)
    return value


# ---------------------------------------------------------------------------
# hyperparameter <-> natural conversions
# ---------------------------------------------------------------------------


def hyper_to_natural(h: GmmHyperParams) -> GlobalNaturalParams:
    """Map hyperparameters to natural coordinates; validates the domain."""
    alpha = np.asarray(h.alpha, dtype=np.float64)
    m = np.asarray(h.m, dtype=np.float64)
    beta = np.asarray(h.beta, dtype=np.float64)
    W = np.asarray(h.W, dtype=np.float64)
    nu = np.asarray(h.nu, dtype=np.float64)
    K = alpha.shape[0]
    D = m.shape[1]
    if not np.all(alpha > 0.0):
        raise DomainError("alpha nonpositive")
    if not np.all(beta > 0.0):
        raise DomainError("beta nonpositive")
    if not np.all(nu > D - 1.0):
        raise DomainError("nu out of range (requires nu > D - 1)")
    comps = []
    for k in range(K):
        Wk = W[k]
        if not np.allclose(Wk, Wk.T, rtol=1e-10, atol=1e-12):
            raise DomainError(f"W not symmetric at component {k}")
        try:
            np.linalg.cholesky(Wk)
        except np.linalg.LinAlgError:
            raise DomainError(f"W not positive definite at component {k}") from None
        w_inv = np.linalg.inv(Wk)
        w_inv = 0.5 * (w_inv + w_inv.T)
        comps.append(
            NormalWishartNat(
                a=float(0.5 * (nu[k] - D)),
                B=-0.5 * w_inv - 0.5 * beta[k] * np.outer(m[k], m[k]),
                c=beta[k] * m[k],
                d=float(-0.5 * beta[k]),
            )
        )
    return GlobalNaturalParams(
        dirichlet=DirichletNat(eta=alpha - 1.0), components=tuple(comps)
    )


def natural_to_hyper(phi: GlobalNaturalParams) -> GmmHyperParams:
    """Map natural coordinates back to hyperparameters; validates the domain."""
    eta = _as_eta(phi.dirichlet)
    K = phi.num_components
    D = phi.dim
    if eta.shape[0] != K:
        raise ValueError("Dirichlet length does not match component count")
    alpha = eta + 1.0
    m = np.empty((K, D))
    beta = np.empty(K)
    W = np.empty((K, D, D))
    nu = np.empty(K)
    for k, comp in enumerate(phi.components):
        beta_k, m_k, nu_k, _, W_k, _ = _nw_recover(comp)
        beta[k] = beta_k
        m[k] = m_k
        nu[k] = nu_k
        W[k] = W_k
    return GmmHyperParams(alpha=alpha, m=m, beta=beta, W=W, nu=nu)


def in_domain(phi: GlobalNaturalParams) -> bool:
    """True when phi lies in the valid domain Ω (total, never raises)."""
    try:
        eta = np.asarray(phi.dirichlet.eta, dtype=np.float64)
        if not np.all(np.isfinite(eta)) or not np.all(eta > -1.0):
            return False
        for comp in phi.components:
            vals = np.concatenate(
                [np.ravel(comp.B), np.ravel(comp.c), [comp.a, comp.d]]
            )
            if not np.all(np.isfinite(vals)):
                return False
            _nw_recover(comp)
    except (DomainError, ValueError):
        return False
    return True


def project_to_domain(
    phi: GlobalNaturalParams, margins: ProjectionMargins = ProjectionMargins()
) -> GlobalNaturalParams:
    """Project phi onto the valid domain Ω.

    Points already in Ω are returned unchanged (same object), which makes the
    operation idempotent. Violated blocks are repaired by flooring the
    recovered hyperparameters: alpha at margins.alpha, beta at margins.beta,
    nu at D - 1 + margins.nu, and the recovered W⁻¹ is symmetrized and has its
    eigenvalues clipped at margins.eigen. Within a repaired NW block, c is
    always preserved and untouched fields keep their exact bits.
    """
    if in_domain(phi):
        return phi
    eta = np.asarray(phi.dirichlet.eta, dtype=np.float64)
    eta_floor = margins.alpha - 1.0
    new_eta = eta if np.all(eta > -1.0) else np.maximum(eta, eta_floor)
    D = phi.dim
    comps = []
    for comp in phi.components:
        try:
            _nw_recover(comp)
        except (DomainError, ValueError):
            pass
        else:
            comps.append(comp)
            continue
        a = float(comp.a)
        c = np.asarray(comp.c, dtype=np.float64)
        d = float(comp.d)
        beta = -2.0 * d
        if not beta > margins.beta:
            beta = margins.beta
            d = -0.5 * beta
        nu = 2.0 * a + D
        if not nu > D - 1.0 + margins.nu:
            nu = D - 1.0 + margins.nu
            a = 0.5 * (nu - D)
        B = np.asarray(comp.B, dtype=np.float64)
        B = 0.5 * (B + B.T)
        rank1 = np.outer(c, c) / (2.0 * beta)
        w_inv = -2.0 * B - 2.0 * rank1
        w_inv = 0.5 * (w_inv + w_inv.T)
        try:
            np.linalg.cholesky(w_inv)
        except np.linalg.LinAlgError:
            # W⁻¹ is only stored implicitly (B = -W⁻¹/2 - c cᵀ/(2 beta)), so a
            # clip below the cancellation noise of that round trip would not
            # survive re-recovery. Raise the floor with the magnitudes in play;
            # for well-scaled blocks it stays at margins.eigen.
            eigvals, eigvecs = np.linalg.eigh(w_inv)
            scale = max(np.max(np.abs(eigvals)), 2.0 * np.max(np.abs(rank1)), 1.0)
            floor = max(margins.eigen, 64.0 * D * np.finfo(np.float64).eps * scale)
            for _ in range(8):
                clipped = np.maximum(eigvals, floor)
                w_new = (eigvecs * clipped) @ eigvecs.T
                w_new = 0.5 * (w_new + w_new.T)
                candidate = -0.5 * w_new - rank1
                candidate = 0.5 * (candidate + candidate.T)
                try:
                    _nw_recover(NormalWishartNat(a=a, B=candidate, c=c, d=d))
                except DomainError:
                    floor *= 64.0
                    continue
                B = candidate
                break
            else:
                raise DomainError(
                    "projection could not produce a representable positive "
                    "definite W^-1 for this block"
                ) from None
        comps.append(NormalWishartNat(a=a, B=B, c=c, d=d))
    return GlobalNaturalParams(
        dirichlet=DirichletNat(eta=new_eta), components=tuple(comps)
    )


# ---------------------------------------------------------------------------
# batched array-level twins (trusted inputs, used by the network algorithms)
# ---------------------------------------------------------------------------


def flat_to_hyper_arrays(vec: np.ndarray, K: int, D: int):
    """(..., L) flattened vectors -> (alpha, m, beta, W, nu) hyper arrays.

    Trusted path: assumes every vector lies in Ω (no validation).
    """
    eta, a, b_packed, c, d = split_flat(vec, K, D)
    beta = -2.0 * d
    m = c / beta[..., None]
    nu = 2.0 * a + D
    B = unpack_sym(b_packed, D)
    w_inv = -2.0 * B - c[..., :, None] * c[..., None, :] / beta[..., None, None]
    W = np.linalg.inv(w_inv)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return eta + 1.0, m, beta, W, nu


def precision_arrays_to_flat(alpha, m, beta, w_inv, nu) -> np.ndarray:
    """Like :func:`hyper_arrays_to_flat` but takes W⁻¹ directly.

    Useful when the caller already holds the precision-side matrix (the VBM
    update produces W⁻¹ before any inversion), avoiding a needless round trip.
    """
    D = m.shape[-1]
    B = -0.5 * w_inv - 0.5 * beta[..., None, None] * (
        m[..., :, None] * m[..., None, :]
    )
    return join_flat(
        alpha - 1.0,
        0.5 * (nu - D),
        pack_sym(B),
        beta[..., None] * m,
        -0.5 * beta,
    )


def hyper_arrays_to_flat(alpha, m, beta, W, nu) -> np.ndarray:
    """Hyper arrays with leading batch axes -> (..., L) flattened vectors."""
    w_inv = np.linalg.inv(W)
    w_inv = 0.5 * (w_inv + np.swapaxes(w_inv, -1, -2))
    return precision_arrays_to_flat(alpha, m, beta, w_inv, nu)


def _nw_log_partition_arrays(beta, nu, logdet_w, D: int):
    """Batched NW log partition from recovered pieces, shape (..., K)."""
    j = np.arange(1, D + 1, dtype=np.float64)
    return (
        -0.5 * D * np.log(beta)
        + 0.5 * nu * logdet_w
        + 0.5 * nu * D * _LOG_2
        + np.sum(log_gamma(0.5 * (nu[..., None] + 1.0 - j)), axis=-1)
    )


def _dirichlet_log_partition_arrays(alpha):
    """Batched Dirichlet log partition over the last axis."""
    return np.sum(log_gamma(alpha), axis=-1) - log_gamma(np.sum(alpha, axis=-1))


def kl_global_flat(vec_p: np.ndarray, vec_q: np.ndarray, K: int, D: int) -> np.ndarray:
    """Batched KL(p ‖ q) between flattened posteriors, broadcasting over batch axes.

    Trusted path: assumes both operands lie in Ω.
    """
    vec_p, vec_q = np.broadcast_arrays(vec_p, vec_q)
    eta_p, a_p, bp_p, c_p, d_p = split_flat(vec_p, K, D)
    eta_q, a_q, bp_q, c_q, d_q = split_flat(vec_q, K, D)

    alpha_p = eta_p + 1.0
    alpha_q = eta_q + 1.0
    e_log_pi = digamma(alpha_p) - digamma(np.sum(alpha_p, axis=-1))[..., None]
    kl = (
        np.sum((eta_p - eta_q) * e_log_pi, axis=-1)
        - _dirichlet_log_partition_arrays(alpha_p)
        + _dirichlet_log_partition_arrays(alpha_q)
    )

    def recover(a, bp, c, d):
        beta = -2.0 * d
        nu = 2.0 * a + D
        B = unpack_sym(bp, D)
        w_inv = -2.0 * B - c[..., :, None] * c[..., None, :] / beta[..., None, None]
        sign, logdet_winv = np.linalg.slogdet(w_inv)
        return beta, nu, w_inv, -logdet_winv

    beta_p, nu_p, winv_p, logdet_wp = recover(a_p, bp_p, c_p, d_p)
    beta_q, nu_q, _, logdet_wq = recover(a_q, bp_q, c_q, d_q)

    W_p = np.linalg.inv(winv_p)
    W_p = 0.5 * (W_p + np.swapaxes(W_p, -1, -2))
    m_p = c_p / beta_p[..., None]
    j = np.arange(1, D + 1, dtype=np.float64)
    e_logdet = (
        np.sum(digamma(0.5 * (nu_p[..., None] + 1.0 - j)), axis=-1)
        + D * _LOG_2
        + logdet_wp
    )
    e_lambda = nu_p[..., None, None] * W_p
    e_lambda_mu = np.einsum("...uv,...v->...u", e_lambda, m_p)
    e_mu_lambda_mu = D / beta_p + np.einsum("...u,...u->...", m_p, e_lambda_mu)

    # tr((B_p - B_q) E[Λ]) via packed vectors: off-diagonal entries count twice.
    weights = np.where(np.triu_indices(D)[0] == np.triu_indices(D)[1], 1.0, 2.0)
    tr_term = np.sum((bp_p - bp_q) * pack_sym(e_lambda) * weights, axis=-1)

    a_part = _nw_log_partition_arrays(beta_p, nu_p, logdet_wp, D)
    a_part_q = _nw_log_partition_arrays(beta_q, nu_q, logdet_wq, D)
    kl_nw = (
        (a_p - a_q) * e_logdet
        + tr_term
        + np.einsum("...u,...u->...", c_p - c_q, e_lambda_mu)
        + (d_p - d_q) * e_mu_lambda_mu
        - a_part
        + a_part_q
    )
    return kl + np.sum(kl_nw, axis=-1)


def in_domain_flat(vec: np.ndarray, K: int, D: int) -> np.ndarray:
    """Batched Ω membership for (n, L) flattened vectors, returns (n,) bools."""
    eta, a, bp, c, d = split_flat(vec, K, D)
    beta = -2.0 * d
    nu = 2.0 * a + D
    ok = np.all(np.isfinite(vec), axis=-1)
    ok &= np.all(eta > -1.0, axis=-1)
    ok &= np.all(beta > 0.0, axis=-1)
    ok &= np.all(nu > D - 1.0, axis=-1)

    def winv_of(rows):
        B = unpack_sym(bp[rows], D)
        w_inv = (
            -2.0 * B
            - c[rows][..., :, None] * c[rows][..., None, :] / beta[rows][..., None, None]
        )
        return 0.5 * (w_inv + np.swapaxes(w_inv, -1, -2))

    if ok.all():
        # Common case: one batched factorization decides every row at once.
        try:
            np.linalg.cholesky(winv_of(slice(None)))
            return ok
        except np.linalg.LinAlgError:
            pass
    for i in np.nonzero(ok)[0]:
        w_inv = winv_of(i)
        try:
            if not np.all(np.isfinite(w_inv)):
                raise np.linalg.LinAlgError
            np.linalg.cholesky(w_inv)
        except np.linalg.LinAlgError:
            ok[i] = False
    return ok


def project_flat(
    vec: np.ndarray, K: int, D: int, margins: ProjectionMargins = ProjectionMargins()
) -> np.ndarray:
    """Batched projection for (n, L) stacks; rows already in Ω keep their bits."""
    ok = in_domain_flat(vec, K, D)
    if ok.all():
        return vec
    out = vec.copy()
    for i in np.nonzero(~ok)[0]:
        out[i] = flatten(project_to_domain(unflatten(vec[i], K, D), margins))
    return out
