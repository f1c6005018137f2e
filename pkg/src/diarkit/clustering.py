"""Average-linkage AHC over similarity matrices and Bayesian-HMM (VBx)
refinement of an initial labeling.

The VBx model: each speaker s has a latent y_s ~ N(0, I); window embeddings
in the diagonalized backend space are emitted as N(x_t; V y_s, I) with
V = diag(sqrt(phi)). Transitions are sticky: p(s'|s) = p_loop * delta(s, s')
+ (1 - p_loop) * pi_s'. The acoustic scale fa multiplies emission
log-likelihoods inside forward-backward and fa/fb scales the sufficient
statistics of the speaker-posterior update, so the traced objective

    ELBO = log-evidence(scaled emissions) - fb * sum_s KL(q(y_s) || N(0, I))

is a coherent coordinate-ascent target whose monotone increase is testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .backend import SimilarityMatrix
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AhcConfig:
    """Stop merging when the best similarity drops below threshold, while
    honoring the cluster-count constraints."""

    threshold: float = 0.0
    min_clusters: int = 1
    max_clusters: int | None = None

    def __post_init__(self):
        if self.min_clusters < 1:
            raise ConfigError(f"min_clusters must be >= 1, got {self.min_clusters}")
        if self.max_clusters is not None and self.max_clusters < self.min_clusters:
            raise ConfigError(
                f"max_clusters={self.max_clusters} below min_clusters={self.min_clusters}"
            )


def ahc(sim, cfg: AhcConfig = AhcConfig()) -> np.ndarray:
    """Average-linkage agglomerative clustering on a similarity matrix.

    Merges the most similar pair (ties: smallest index pair) while the best
    similarity stays >= threshold or the cluster count exceeds max_clusters,
    never going below min_clusters. Labels are 0-based in order of first
    appearance.
    """
    values = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    n = values.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # pairwise sums between clusters; mean linkage = sums / (|a| * |b|)
    sums = values.astype(np.float64).copy()
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)  # item -> cluster slot
    n_alive = n

    while n_alive > max(1, cfg.min_clusters):
        with np.errstate(invalid="ignore"):
            means = sums / np.outer(sizes, sizes)
        means[~alive, :] = -np.inf
        means[:, ~alive] = -np.inf
        means[np.tril_indices(n)] = -np.inf
        flat = int(np.argmax(means))  # row-major: first max is smallest (i, j)
        i, j = divmod(flat, n)
        best = means[i, j]
        if not (best >= cfg.threshold or (cfg.max_clusters is not None and n_alive > cfg.max_clusters)):
            break
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        sizes[i] += sizes[j]
        alive[j] = False
        owner[owner == j] = i
        n_alive -= 1

    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for item in range(n):
        slot = owner[item]
        if labels[item] == -1:
            members = owner == slot
            labels[members] = next_label
            next_label += 1
    return labels


@dataclass(frozen=True)
class VbxConfig:
    p_loop: float = 0.9
    fa: float = 9.0
    fb: float = 4.0
    max_iters: int = 40
    elbo_tol: float = 1e-6
    drop_prior: float = 1e-3

    def __post_init__(self):
        if not (0.0 <= self.p_loop < 1.0):
            raise ConfigError(f"p_loop must lie in [0, 1), got {self.p_loop}")
        if self.fa <= 0 or self.fb <= 0:
            raise ConfigError(f"fa and fb must be positive, got fa={self.fa}, fb={self.fb}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.elbo_tol < 0 or not (0.0 <= self.drop_prior < 1.0):
            raise ConfigError("bad elbo_tol / drop_prior")


@dataclass
class VbxState:
    """Variational posteriors after refinement."""

    gamma: np.ndarray  # T x S responsibilities
    alpha: np.ndarray  # S x R posterior means of y_s
    lambda_inv: np.ndarray  # S x R posterior variances (diagonal)
    pi: np.ndarray  # S speaker priors
    elbo_trace: list[float]


def forward_backward(log_emissions, pi, p_loop: float):
    """Exact HMM posteriors under sticky transitions, in log space.

    Returns (gamma, log_evidence); gamma rows sum to one.
    """
    gamma, log_evidence, _, _ = _forward_backward_full(log_emissions, pi, p_loop)
    return gamma, log_evidence


def _forward_backward_full(log_emissions, pi, p_loop):
    lls = np.asarray(log_emissions, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if lls.ndim != 2:
        raise DataError(f"log_emissions must be T x S, got shape {lls.shape}")
    t_len, s_len = lls.shape
    if pi.shape != (s_len,):
        raise DataError(f"pi must have length {s_len}, got {pi.shape}")
    if not np.isfinite(lls).all() or not np.isfinite(pi).all():
        raise DataError("forward_backward inputs must be finite")
    if not (0.0 <= p_loop < 1.0):
        raise ConfigError(f"p_loop must lie in [0, 1), got {p_loop}")
    if abs(pi.sum() - 1.0) > 1e-6 or np.any(pi < 0):
        raise DataError("pi must be a probability vector")
    if t_len == 0:
        return np.zeros((0, s_len)), 0.0, np.zeros((0, s_len)), np.zeros((0, s_len))

    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_tr = np.log(p_loop * np.eye(s_len) + (1.0 - p_loop) * pi[None, :])

    lfw = np.empty_like(lls)
    lbw = np.empty_like(lls)
    lfw[0] = lls[0] + log_pi
    for t in range(1, t_len):
        lfw[t] = lls[t] + logsumexp(lfw[t - 1][:, None] + log_tr, axis=0)
    lbw[-1] = 0.0
    for t in range(t_len - 2, -1, -1):
        lbw[t] = logsumexp(log_tr + (lls[t + 1] + lbw[t + 1])[None, :], axis=1)

    log_evidence = float(logsumexp(lfw[-1]))
    gamma = np.exp(lfw + lbw - log_evidence)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, log_evidence, lfw, lbw


def _update_pi(gamma, lfw, lbw, lls, pi, p_loop, log_evidence):
    """Expected-count update for the sticky-transition priors.

    Uses the responsibilities of the non-loop branch (plus the initial
    state), which is the exact EM step for pi and keeps the ELBO monotone.
    """
    if len(lls) > 1:
        with np.errstate(divide="ignore"):
            log_switch = np.log((1.0 - p_loop) * pi)
        log_counts = (
            logsumexp(lfw[:-1], axis=1)[:, None]
            + log_switch[None, :]
            + lls[1:]
            + lbw[1:]
            - log_evidence
        )
        with np.errstate(invalid="ignore"):
            counts = np.exp(logsumexp(log_counts, axis=0))
    else:
        counts = 0.0
    new_pi = gamma[0] + counts
    return new_pi / new_pi.sum()


def vbx_refine(x, phi, init_labels: Sequence, cfg: VbxConfig = VbxConfig()):
    """Refine an initial hard labeling with the VB-HMM.

    x holds diagonalized embeddings (rows), phi the between-class variances
    of that space. Returns (labels, VbxState); labels are 0-based in order
    of first appearance. Speakers whose prior falls below cfg.drop_prior are
    removed between iterations.
    """
    x = np.asarray(x, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"x must be N x R, got shape {x.shape}")
    if phi.shape != (x.shape[1],):
        raise DataError(f"phi must have length {x.shape[1]}, got {phi.shape}")
    if np.any(phi <= 0):
        raise DataError("phi entries must be positive")
    n, r = x.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), VbxState(
            np.zeros((0, 0)), np.zeros((0, r)), np.zeros((0, r)), np.zeros(0), []
        )
    if len(init_labels) != n:
        raise DataError(f"{len(init_labels)} init labels for {n} embeddings")

    # drop empty init clusters, order speakers by first appearance
    speaker_of: dict = {}
    for lab in init_labels:
        speaker_of.setdefault(lab, len(speaker_of))
    s_len = len(speaker_of)
    gamma = np.zeros((n, s_len))
    gamma[np.arange(n), [speaker_of[lab] for lab in init_labels]] = 1.0
    pi = np.full(s_len, 1.0 / s_len)

    sqrt_phi = np.sqrt(phi)
    xv = x * sqrt_phi[None, :]  # x_t^T V
    log_norm = -0.5 * (x**2).sum(axis=1) - 0.5 * r * np.log(2.0 * np.pi)
    ratio = cfg.fa / cfg.fb

    elbo_trace: list[float] = []
    alpha = np.zeros((s_len, r))
    lambda_inv = np.ones((s_len, r))
    for _ in range(cfg.max_iters):
        # q(Y) update from current responsibilities
        occupancy = gamma.sum(axis=0)  # S
        first_moment = gamma.T @ x  # S x R
        lambda_inv = 1.0 / (1.0 + ratio * occupancy[:, None] * phi[None, :])
        alpha = lambda_inv * (ratio * first_moment * sqrt_phi[None, :])

        # expected emission log-likelihoods, scaled by fa
        quad = 0.5 * ((lambda_inv + alpha**2) * phi[None, :]).sum(axis=1)  # S
        lls = cfg.fa * (log_norm[:, None] + xv @ alpha.T - quad[None, :])

        gamma, log_evidence, lfw, lbw = _forward_backward_full(lls, pi, cfg.p_loop)

        kl_y = 0.5 * ((lambda_inv + alpha**2).sum() - lambda_inv.size - np.log(lambda_inv).sum())
        elbo = log_evidence - cfg.fb * kl_y
        prev = elbo_trace[-1] if elbo_trace else None
        elbo_trace.append(elbo)

        pi = _update_pi(gamma, lfw, lbw, lls, pi, cfg.p_loop, log_evidence)

        # drop vanishing speakers (keep at least one)
        weak = pi < cfg.drop_prior
        if weak.any() and (~weak).sum() >= 1 and weak.sum() < len(pi):
            keep = ~weak
            gamma = gamma[:, keep]
            gamma /= gamma.sum(axis=1, keepdims=True)
            pi = pi[keep] / pi[keep].sum()
            alpha = alpha[keep]
            lambda_inv = lambda_inv[keep]
            continue  # structure changed; do not test convergence this round

        if prev is not None and abs(elbo - prev) < cfg.elbo_tol * max(1.0, abs(prev)):
            break

    hard = gamma.argmax(axis=1)
    relabel: dict[int, int] = {}
    labels = np.empty(n, dtype=np.int64)
    for i, s in enumerate(hard):
        relabel.setdefault(int(s), len(relabel))
        labels[i] = relabel[int(s)]
    state = VbxState(gamma=gamma, alpha=alpha, lambda_inv=lambda_inv, pi=pi, elbo_trace=elbo_trace)
    return labels, state
