"""Network inference schedulers over the shared VBE/VBM primitives.

Five ways to turn per-node local VB optima into per-node posterior estimates,
all executing synchronized rounds of VBE → local VBM → exchange/update:

* ``cvb`` — centralized: every round broadcasts the unweighted average of all
  local optima (a fusion-center reference, not distributed).
* ``noncoop`` — no cooperation: each node keeps its own local optimum.
* ``nsg_dvb`` — one-step averaging of the closed neighborhood's local optima.
* ``dsvb`` — stochastic natural-gradient adapt ψ_i = φ_i + η_t (φ_i* − φ_i)
  with step size η_t = 1/(d0 + τ t), then diffusion combine φ_i = Σ_j w_ij ψ_j.
* ``dvb_admm`` — consensus ADMM in natural coordinates: primal
  φ_i = (φ_i* − 2 λ_i + ρ Σ_{j∈N_i}(φ_i' + φ_j')) / (1 + 2 ρ |N_i|) followed by
  projection onto the valid domain, then the damped dual ascent
  λ_i += κ_t (ρ/2) Σ_{j∈N_i}(φ_i − φ_j) with κ_t = 1 − 1/(1+ξt)².

All exchange arithmetic happens on the flattened natural-parameter layout,
where the family is closed under the affine combinations above. Rounds are
synchronous: every combine/dual step reads a snapshot of the values produced
by the preceding phase, never a mix of rounds, and neighbor reductions use a
fixed node order so results do not depend on scheduling.
"""

from __future__ import annotations

import itertools
import time
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .expfam import (
    DomainError,
    GlobalNaturalParams,
    digamma,
    flat_size,
    flat_to_hyper_arrays,
    flatten,
    in_domain_flat,
    log_gamma,
    pack_sym,
    precision_arrays_to_flat,
    project_flat,
    project_to_domain,
    split_flat,
    unflatten,
)
from .gmm import (
    GmmModelConfig,
    Responsibilities,
    _as_points,
    vbe_coefficients,
    vbm_precision_from_moments,
)
from .network import Network, is_connected, metropolis_weights, nearest_neighbor_weights

__all__ = [
    "ALGORITHM_KINDS",
    "AlgoConfig",
    "NodeState",
    "RunTrace",
    "admm_dual",
    "admm_dual_flat",
    "admm_primal",
    "admm_primal_flat",
    "aligned_kl_costs",
    "centralized_vbm",
    "dsvb_adapt",
    "dsvb_combine",
    "kappa",
    "nsg_combine",
    "run",
    "step_size",
]

ALGORITHM_KINDS = ("cvb", "noncoop", "nsg_dvb", "dsvb", "dvb_admm")
_DISTRIBUTED_KINDS = ("nsg_dvb", "dsvb", "dvb_admm")
_WEIGHT_RULES = ("nearest", "metropolis")


class AlgoConfig(NamedTuple):
    """Which scheduler to run and with what schedule parameters.

    tau/d0 parameterize the dsvb step size, rho/xi the ADMM penalty and dual
    damping; each is validated only for the kind that uses it. eval_stride
    thins trace evaluation for long runs (the final iteration is always
    recorded).
    """

    kind: str
    tau: float = 0.2
    d0: float = 1.0
    rho: float = 0.5
    xi: float = 0.05
    max_iters: int = 100
    weight_rule: str = "nearest"
    eval_stride: int = 1


class NodeState(NamedTuple):
    """One node's estimate: posterior, ADMM multiplier (else None), last VBE."""

    phi: GlobalNaturalParams
    lam: Optional[np.ndarray]
    r: Optional[Responsibilities]


class RunTrace(NamedTuple):
    """Per-evaluated-iteration run metrics.

    Costs are aligned KL divergences to the supplied ground truth (NaN when no
    truth was given); consensus_disagreement is max_{i,j} ‖φ_i − φ_j‖ over the
    flattened estimates; elapsed_ms is wall time since the run started;
    max_primal_residual is max_i ‖Σ_{j∈N_i}(φ_i − φ_j)‖ (ADMM runs only).
    """

    iterations: np.ndarray
    mean_cost: np.ndarray
    std_cost: np.ndarray
    consensus_disagreement: np.ndarray
    elapsed_ms: np.ndarray
    per_node_cost: Optional[np.ndarray] = None
    max_primal_residual: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def step_size(t: int, d0: float, tau: float) -> float:
    """Diminishing dsvb step size η_t = 1/(d0 + τ t); Ση = ∞, Ση² < ∞."""
    if t < 1:
        raise ValueError("t must be at least 1")
    if d0 < 1.0:
        raise ValueError("d0 must be at least 1")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return 1.0 / (d0 + tau * t)


def kappa(t: int, xi: float) -> float:
    """Dual damping κ_t = 1 − 1/(1+ξt)², increasing from ~0 toward 1."""
    if t < 1:
        raise ValueError("t must be at least 1")
    if not 0.0 < xi < 1.0:
        raise ValueError("xi must lie in (0, 1)")
    g = 1.0 + xi * t
    return 1.0 - 1.0 / (g * g)


# ---------------------------------------------------------------------------
# structured per-node operations
# ---------------------------------------------------------------------------


def _flat_like(phi: GlobalNaturalParams, reference=None) -> np.ndarray:
    vec = flatten(phi)
    if reference is not None and vec.shape != reference.shape:
        raise ValueError("posterior shapes do not match")
    return vec


def dsvb_adapt(
    phi_prev: GlobalNaturalParams, phi_star: GlobalNaturalParams, eta: float
) -> GlobalNaturalParams:
    """Relaxation ψ = φ + η (φ* − φ) toward the local optimum.

    Computed as (1−η) φ + η φ*, which returns the endpoints exactly at η = 0
    and η = 1. Both endpoints lie in the valid domain, hence so does every ψ
    by convexity.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    prev = _flat_like(phi_prev)
    star = _flat_like(phi_star, prev)
    psi = (1.0 - eta) * prev + eta * star
    return unflatten(psi, phi_prev.num_components, phi_prev.dim)


def dsvb_combine(messages) -> GlobalNaturalParams:
    """Diffusion combine: the w-weighted average of neighborhood messages."""
    if not messages:
        raise ValueError("messages must be non-empty")
    total = 0.0
    acc = None
    first = None
    for phi, weight in messages:
        weight = float(weight)
        if weight < 0.0:
            raise ValueError("combination weights must be non-negative")
        vec = _flat_like(phi, acc)
        if acc is None:
            first = phi
            acc = weight * vec
        else:
            acc = acc + weight * vec
        total += weight
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"combination weights must sum to 1, got {total!r}")
    return unflatten(acc, first.num_components, first.dim)


def admm_primal_flat(phi_star, lam, phi_self, neighbor_sum, degree, rho):
    """Affine ADMM primal update on flattened vectors (no projection).

    (φ* − 2λ + ρ (deg · φ_self + Σ_nbr φ)) / (1 + 2 ρ deg); works on arrays of
    any matching shape, scalars included.
    """
    return (phi_star - 2.0 * lam + rho * (degree * phi_self + neighbor_sum)) / (
        1.0 + 2.0 * rho * degree
    )


def admm_dual_flat(lam_prev, phi_self, neighbor_sum, degree, rho, kappa_t):
    """Damped dual ascent λ' = λ + κ (ρ/2)(deg · φ_self − Σ_nbr φ)."""
    return lam_prev + kappa_t * (rho / 2.0) * (degree * phi_self - neighbor_sum)


def admm_primal(
    phi_star: GlobalNaturalParams,
    lam: np.ndarray,
    phi_prev_self: GlobalNaturalParams,
    phi_prev_neighbors,
    rho: float,
) -> GlobalNaturalParams:
    """ADMM primal update followed by projection onto the valid domain."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    star = _flat_like(phi_star)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != star.shape:
        raise ValueError("multiplier shape does not match the posterior")
    prev = _flat_like(phi_prev_self, star)
    nbrs = [_flat_like(p, star) for p in phi_prev_neighbors]
    neighbor_sum = np.sum(nbrs, axis=0) if nbrs else np.zeros_like(star)
    vec = admm_primal_flat(star, lam, prev, neighbor_sum, len(nbrs), rho)
    return project_to_domain(
        unflatten(vec, phi_star.num_components, phi_star.dim)
    )


def admm_dual(
    lambda_prev: np.ndarray,
    phi_self: GlobalNaturalParams,
    phi_neighbors,
    rho: float,
    kappa_t: float,
) -> np.ndarray:
    """Multiplier update from this round's consensus residual."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if not 0.0 <= kappa_t <= 1.0:
        raise ValueError("kappa_t must lie in [0, 1]")
    own = _flat_like(phi_self)
    lam = np.asarray(lambda_prev, dtype=np.float64)
    if lam.shape != own.shape:
        raise ValueError("multiplier shape does not match the posterior")
    nbrs = [_flat_like(p, own) for p in phi_neighbors]
    neighbor_sum = np.sum(nbrs, axis=0) if nbrs else np.zeros_like(own)
    return admm_dual_flat(lam, own, neighbor_sum, len(nbrs), rho, kappa_t)


def centralized_vbm(local_optima) -> GlobalNaturalParams:
    """Unweighted average of all local optima in flattened coordinates."""
    if not local_optima:
        raise ValueError("local_optima must be non-empty")
    vecs = [_flat_like(local_optima[0])]
    for phi in local_optima[1:]:
        vecs.append(_flat_like(phi, vecs[0]))
    mean = np.mean(vecs, axis=0)
    return unflatten(mean, local_optima[0].num_components, local_optima[0].dim)


def nsg_combine(local_optima_neighborhood) -> GlobalNaturalParams:
    """Uniform average of the closed neighborhood's local optima."""
    return centralized_vbm(local_optima_neighborhood)


# ---------------------------------------------------------------------------
# aligned KL cost to a reference posterior
# ---------------------------------------------------------------------------


def aligned_kl_costs(estimates, reference, K: int, D: int) -> np.ndarray:
    """KL(estimate ‖ reference) after aligning component labels.

    ``estimates`` is an (n, L) stack (or single (L,) vector) of flattened
    posteriors; ``reference`` is a flattened vector or structured posterior.
    Mixture components carry arbitrary labels, so each estimate is first
    relabeled by the optimal assignment between its posterior mean vectors m
    and the reference's (the evaluation convention used throughout; a
    relabeled-but-identical estimate scores exactly 0). The KL under the
    chosen permutation is computed exactly: both the Dirichlet KL and the
    per-component KLs decompose into per-(estimate k, reference l) pair costs
    plus a permutation-invariant remainder.
    """
    est = np.asarray(estimates, dtype=np.float64)
    single = est.ndim == 1
    est = np.atleast_2d(est)
    ref = (
        flatten(reference)
        if isinstance(reference, GlobalNaturalParams)
        else np.asarray(reference, dtype=np.float64)
    )
    if est.shape[-1] != flat_size(K, D) or ref.shape != (flat_size(K, D),):
        raise ValueError("flattened shapes do not match (K, D)")

    eta_p, a_p, bp_p, c_p, d_p = split_flat(est, K, D)
    eta_q, a_q, bp_q, c_q, d_q = split_flat(ref, K, D)

    # Dirichlet: pairwise cost of matching estimate component k to slot l.
    alpha_p = eta_p + 1.0
    alpha_q = eta_q + 1.0
    asum_p = np.sum(alpha_p, axis=-1)
    dir_const = log_gamma(asum_p) - float(log_gamma(np.sum(alpha_q)))
    psi_p = digamma(alpha_p) - digamma(asum_p)[:, None]
    dir_pair = (
        -log_gamma(alpha_p)[:, :, None]
        + log_gamma(alpha_q)[None, None, :]
        + (alpha_p[:, :, None] - alpha_q[None, None, :]) * psi_p[:, :, None]
    )

    # NW blocks: expected stats of each estimate component, then the Bregman
    # pair cost ⟨φ_k − φ'_l, E_k[u]⟩ − A_k + A'_l via one matmul.
    def recover(a, bp, c, d):
        beta = -2.0 * d
        nu = 2.0 * a + D
        B_full = np.zeros(bp.shape[:-1] + (D, D))
        iu = np.triu_indices(D)
        B_full[..., iu[0], iu[1]] = bp
        B_full[..., iu[1], iu[0]] = bp
        w_inv = -2.0 * B_full - c[..., :, None] * c[..., None, :] / beta[..., None, None]
        _, logdet_winv = np.linalg.slogdet(w_inv)
        return beta, nu, w_inv, -logdet_winv

    beta_p, nu_p, winv_p, logdet_wp = recover(a_p, bp_p, c_p, d_p)
    beta_q, nu_q, _, logdet_wq = recover(a_q, bp_q, c_q, d_q)
    W_p = np.linalg.inv(winv_p)
    W_p = 0.5 * (W_p + np.swapaxes(W_p, -1, -2))
    m_p = c_p / beta_p[..., None]
    j = np.arange(1, D + 1, dtype=np.float64)
    e_logdet = (
        np.sum(digamma(0.5 * (nu_p[..., None] + 1.0 - j)), axis=-1)
        + D * np.log(2.0)
        + logdet_wp
    )
    e_lambda = nu_p[..., None, None] * W_p
    e_lambda_mu = np.einsum("...uv,...v->...u", e_lambda, m_p)
    e_mu_lambda_mu = D / beta_p + np.einsum("...u,...u->...", m_p, e_lambda_mu)

    def log_partition(beta, nu, logdet_w):
        return (
            -0.5 * D * np.log(beta)
            + 0.5 * nu * logdet_w
            + 0.5 * nu * D * np.log(2.0)
            + np.sum(log_gamma(0.5 * (nu[..., None] + 1.0 - j)), axis=-1)
        )

    iu = np.triu_indices(D)
    pair_weights = np.where(iu[0] == iu[1], 1.0, 2.0)
    # stats/natural vectors stacked [a | triu(B) | c | d] with off-diagonal
    # doubling folded into the stats side
    E = np.concatenate(
        [
            e_logdet[..., None],
            pack_sym(e_lambda) * pair_weights,
            e_lambda_mu,
            e_mu_lambda_mu[..., None],
        ],
        axis=-1,
    )
    P_nat = np.concatenate(
        [a_p[..., None], bp_p, c_p, d_p[..., None]], axis=-1
    )
    Q_nat = np.concatenate(
        [a_q[..., None], bp_q, c_q, d_q[..., None]], axis=-1
    )
    own = np.einsum("nkm,nkm->nk", P_nat, E)
    cross = np.einsum("nkm,lm->nkl", E, Q_nat)
    A_p = log_partition(beta_p, nu_p, logdet_wp)
    A_q = log_partition(beta_q, nu_q, logdet_wq)
    nw_pair = (own - A_p)[:, :, None] - cross + A_q[None, None, :]

    C = dir_pair + nw_pair

    # pick the permutation by mean-vector proximity, then read off its exact KL
    m_q = c_q / beta_q[..., None]
    dist2 = np.sum((m_p[:, :, None, :] - m_q[None, None, :, :]) ** 2, axis=-1)
    if K <= 6:
        perms = np.array(list(itertools.permutations(range(K))))
        cols = np.arange(K)
        totals_dist = dist2[:, perms, cols].sum(axis=-1)
        chosen = perms[np.argmin(totals_dist, axis=-1)]
        best = C[np.arange(C.shape[0])[:, None], chosen, cols].sum(axis=-1)
    else:
        from scipy.optimize import linear_sum_assignment

        best = np.empty(C.shape[0])
        for i in range(C.shape[0]):
            rows, cols = linear_sum_assignment(dist2[i])
            best[i] = C[i][rows, cols].sum()
    costs = dir_const + best
    return float(costs[0]) if single else costs


# ---------------------------------------------------------------------------
# the synchronized-round driver
# ---------------------------------------------------------------------------


def _validate_config(cfg: AlgoConfig) -> None:
    if cfg.kind not in ALGORITHM_KINDS:
        raise ValueError(f"kind must be one of {ALGORITHM_KINDS}, got {cfg.kind!r}")
    if cfg.max_iters < 0:
        raise ValueError("max_iters must be non-negative")
    if cfg.eval_stride < 1:
        raise ValueError("eval_stride must be at least 1")
    if cfg.weight_rule not in _WEIGHT_RULES:
        raise ValueError(f"weight_rule must be one of {_WEIGHT_RULES}")
    if cfg.kind == "dsvb":
        step_size(1, cfg.d0, cfg.tau)  # validates d0 and tau
    if cfg.kind == "dvb_admm":
        if cfg.rho <= 0.0:
            raise ValueError("rho must be positive")
        kappa(1, cfg.xi)  # validates xi


def _init_stack(init, n: int, K: int, D: int) -> np.ndarray:
    if isinstance(init, GlobalNaturalParams):
        vec = flatten(init)
        if vec.shape != (flat_size(K, D),):
            raise ValueError("init does not match the model's (K, D)")
        return np.tile(vec, (n, 1))
    inits = list(init)
    if len(inits) != n:
        raise ValueError(f"need one init per node ({n}), got {len(inits)}")
    stack = np.empty((n, flat_size(K, D)))
    for i, phi in enumerate(inits):
        vec = flatten(phi)
        if vec.shape != (flat_size(K, D),):
            raise ValueError(f"init for node {i} does not match the model's (K, D)")
        stack[i] = vec
    return stack


def _max_pairwise_distance(stack: np.ndarray) -> float:
    gram = stack @ stack.T
    sq = np.diagonal(gram)
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    return float(np.sqrt(max(float(d2.max()), 0.0)))


def run(
    cfg: AlgoConfig,
    model: GmmModelConfig,
    net: Network,
    data,
    init,
    truth: Optional[GlobalNaturalParams] = None,
):
    """Execute max_iters synchronized rounds; returns (RunTrace, [NodeState]).

    ``data`` holds one dataset per node (empty nodes allowed); ``init`` is a
    single posterior shared by every node or a per-node sequence. When
    ``truth`` is given the trace carries aligned KL costs to it. Domain
    violations are reported with iteration and node context; they indicate a
    genuinely broken state since every kind preserves the domain by convexity
    or projection.
    """
    _validate_config(cfg)
    n, K, D = net.n, model.K, model.D
    if len(data) != n:
        raise ValueError(f"need one dataset per node ({n}), got {len(data)}")
    if model.N != n:
        raise ValueError(
            f"model replication factor N={model.N} must equal the node count {n}"
        )
    if cfg.kind in _DISTRIBUTED_KINDS and not is_connected(net):
        raise ValueError(f"{cfg.kind} requires a connected network")

    points = [_as_points(d, D) for d in data]
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(x) for x in points])
    x_all = (
        np.ascontiguousarray(np.concatenate(points, axis=0))
        if offsets[-1]
        else np.zeros((0, D))
    )

    phi = _init_stack(init, n, K, D)
    ok = in_domain_flat(phi, K, D)
    if not ok.all():
        bad = int(np.nonzero(~ok)[0][0])
        raise DomainError(f"initial state for node {bad} is outside the valid domain")

    lam = np.zeros_like(phi) if cfg.kind == "dvb_admm" else None
    truth_flat = flatten(truth) if truth is not None else None

    if cfg.kind == "dsvb":
        rule = nearest_neighbor_weights if cfg.weight_rule == "nearest" else metropolis_weights
        w = rule(net).w
    elif cfg.kind == "nsg_dvb":
        w = nearest_neighbor_weights(net).w
    else:
        w = None
    if cfg.kind == "dvb_admm":
        adj = np.zeros((n, n))
        for i, nbrs in enumerate(net.adjacency):
            adj[i, list(nbrs)] = 1.0
        deg = adj.sum(axis=1)

    rec_iter, rec_mean, rec_std, rec_dis, rec_ms = [], [], [], [], []
    rec_per_node = [] if truth is not None else None
    rec_residual = [] if cfg.kind == "dvb_admm" else None
    r_all = None
    start = time.perf_counter()

    for t in range(1, cfg.max_iters + 1):
        alpha, m, beta, W, nu = flat_to_hyper_arrays(phi, K, D)
        coef, H = vbe_coefficients(alpha, m, beta, W, nu)
        r_all, s0, s1, s2 = kernels.fused_resp_moments(
            x_all,
            offsets,
            np.ascontiguousarray(coef),
            np.ascontiguousarray(m),
            np.ascontiguousarray(H),
        )
        phi_star = precision_arrays_to_flat(
            *vbm_precision_from_moments(model, s0, s1, s2)
        )

        if cfg.kind == "cvb":
            phi = np.tile(phi_star.mean(axis=0), (n, 1))
        elif cfg.kind == "noncoop":
            phi = phi_star
        elif cfg.kind == "nsg_dvb":
            phi = w @ phi_star
        elif cfg.kind == "dsvb":
            eta = step_size(t, cfg.d0, cfg.tau)
            psi = (1.0 - eta) * phi + eta * phi_star
            phi = w @ psi
        else:  # dvb_admm
            neighbor_sum = adj @ phi
            raw = admm_primal_flat(
                phi_star, lam, phi, neighbor_sum, deg[:, None], cfg.rho
            )
            try:
                phi = project_flat(raw, K, D)
            except DomainError as err:
                raise DomainError(f"iteration {t}: {err}") from None
            residual = deg[:, None] * phi - adj @ phi
            lam = lam + kappa(t, cfg.xi) * (cfg.rho / 2.0) * residual

        ok = in_domain_flat(phi, K, D)
        if not ok.all():
            bad = int(np.nonzero(~ok)[0][0])
            raise DomainError(
                f"node {bad} left the valid domain at iteration {t} ({cfg.kind})"
            )

        if t % cfg.eval_stride == 0 or t == cfg.max_iters:
            rec_iter.append(t)
            if truth_flat is not None:
                costs = aligned_kl_costs(phi, truth_flat, K, D)
                rec_mean.append(float(np.mean(costs)))
                rec_std.append(float(np.std(costs)))
                rec_per_node.append(costs)
            else:
                rec_mean.append(np.nan)
                rec_std.append(np.nan)
            rec_dis.append(_max_pairwise_distance(phi))
            rec_ms.append((time.perf_counter() - start) * 1000.0)
            if rec_residual is not None:
                res_norm = np.linalg.norm(residual, axis=1)
                rec_residual.append(float(res_norm.max()))

    trace = RunTrace(
        iterations=np.asarray(rec_iter, dtype=np.int64),
        mean_cost=np.asarray(rec_mean),
        std_cost=np.asarray(rec_std),
        consensus_disagreement=np.asarray(rec_dis),
        elapsed_ms=np.asarray(rec_ms),
        per_node_cost=np.asarray(rec_per_node) if rec_per_node is not None else None,
        max_primal_residual=(
            np.asarray(rec_residual) if rec_residual is not None else None
        ),
    )
    states = []
    for i in range(n):
        r_i = (
            Responsibilities(r=r_all[offsets[i] : offsets[i + 1]].copy())
            if r_all is not None
            else None
        )
        states.append(
            NodeState(
                phi=unflatten(phi[i], K, D),
                lam=lam[i].copy() if lam is not None else None,
                r=r_i,
            )
        )
    return trace, states
