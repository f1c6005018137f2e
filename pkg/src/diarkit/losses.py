"""Reference loss kernels: powerset cross-entropy, PIT, MixIT and their
convex combination.

All minimizations are exhaustive (permutations / assignment matrices), which
is exact and cheap at the few-speaker scale these kernels target. No
gradients are provided; these are verification kernels, not training code.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError

BCE_CLIP = 1e-7
SNR_EPS = 1e-8
MAX_EXHAUSTIVE = 8


@dataclass(frozen=True)
class PowersetSpace:
    """All speaker subsets of {1..k_max} with size <= max_overlap.

    Classes are ordered by (size, lexicographic); class 0 is the empty set.
    """

    k_max: int
    max_overlap: int
    classes: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.k_max < 1 or not (1 <= self.max_overlap <= self.k_max):
            raise ConfigError(
                f"need 1 <= max_overlap <= k_max, got k_max={self.k_max}, "
                f"max_overlap={self.max_overlap}"
            )
        classes = [()]
        for size in range(1, self.max_overlap + 1):
            classes.extend(itertools.combinations(range(1, self.k_max + 1), size))
        object.__setattr__(self, "classes", tuple(classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def powerset_classes(k_max: int, max_overlap: int) -> PowersetSpace:
    return PowersetSpace(k_max, max_overlap)


def powerset_encode(frame_multilabel, space: PowersetSpace) -> int:
    """Index of the active-speaker subset; speakers are 1-based in classes."""
    v = np.asarray(frame_multilabel)
    if v.shape != (space.k_max,):
        raise DataError(f"expected a length-{space.k_max} vector, got shape {v.shape}")
    active = tuple(int(i) + 1 for i in np.flatnonzero(v))
    if len(active) > space.max_overlap:
        raise DomainError(
            f"{len(active)} simultaneous speakers exceed max_overlap={space.max_overlap}"
        )
    return space.classes.index(active)


def powerset_decode(index: int, space: PowersetSpace) -> np.ndarray:
    if not (0 <= index < space.n_classes):
        raise DomainError(f"class index {index} outside [0, {space.n_classes})")
    v = np.zeros(space.k_max, dtype=np.int64)
    for spk in space.classes[index]:
        v[spk - 1] = 1
    return v


def _encode_rows(ref: np.ndarray, space: PowersetSpace) -> np.ndarray:
    return np.array([powerset_encode(row, space) for row in ref], dtype=np.int64)


def powerset_ce(pred_logprobs, ref_multilabel, space: PowersetSpace):
    """Permutation-minimized powerset cross-entropy.

    Returns (loss, permutation) where permutation p reorders reference
    columns as ref[:, p] and loss is the mean negative log-probability of
    the encoded reference classes under that best reordering.
    """
    pred = np.asarray(pred_logprobs, dtype=np.float64)
    ref = np.asarray(ref_multilabel)
    if pred.ndim != 2 or pred.shape[1] != space.n_classes:
        raise DataError(f"pred must be T x {space.n_classes}, got {pred.shape}")
    if ref.shape != (pred.shape[0], space.k_max):
        raise DataError(f"ref must be {pred.shape[0]} x {space.k_max}, got {ref.shape}")
    lse = np.log(np.sum(np.exp(pred - pred.max(axis=1, keepdims=True)), axis=1)) + pred.max(axis=1)
    if np.any(np.abs(lse) > 1e-6):
        raise DataError("pred rows must be log-probability vectors (log-sum-exp ~ 0)")
    if np.any(ref.sum(axis=1) > space.max_overlap):
        raise DomainError(f"a reference frame exceeds max_overlap={space.max_overlap}")

    t_index = np.arange(pred.shape[0])
    best_loss, best_perm = np.inf, None
    for perm in itertools.permutations(range(space.k_max)):
        idx = _encode_rows(ref[:, perm], space)
        loss = float(-pred[t_index, idx].mean())
        if loss < best_loss:
            best_loss, best_perm = loss, perm
    return best_loss, best_perm


def pit_loss(pred_activity, ref_activity):
    """Permutation-invariant mean binary cross-entropy.

    Returns (loss, permutation) with the reference columns reordered as
    ref[:, permutation]; probabilities are clipped to [1e-7, 1 - 1e-7].
    """
    pred = np.asarray(pred_activity, dtype=np.float64)
    ref = np.asarray(ref_activity, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 2:
        raise DataError(f"shape mismatch: pred {pred.shape} vs ref {ref.shape}")
    if not np.isin(ref, (0.0, 1.0)).all():
        raise DataError("reference activities must be binary")
    k = pred.shape[1]
    if k > MAX_EXHAUSTIVE:
        raise DomainError(f"exhaustive search supports K <= {MAX_EXHAUSTIVE}, got {k}")
    p = np.clip(pred, BCE_CLIP, 1.0 - BCE_CLIP)
    log_p, log_1mp = np.log(p), np.log1p(-p)

    best_loss, best_perm = np.inf, None
    for perm in itertools.permutations(range(k)):
        r = ref[:, perm]
        loss = float(-(r * log_p + (1.0 - r) * log_1mp).mean())
        if loss < best_loss:
            best_loss, best_perm = loss, perm
    return best_loss, best_perm


@dataclass(frozen=True)
class MixtureOfMixtures:
    """A pair of mixtures plus the sources estimated from their sum."""

    mixtures: np.ndarray  # 2 x T
    estimated_sources: np.ndarray  # M x T

    def __post_init__(self):
        mix = np.asarray(self.mixtures, dtype=np.float64)
        src = np.asarray(self.estimated_sources, dtype=np.float64)
        object.__setattr__(self, "mixtures", mix)
        object.__setattr__(self, "estimated_sources", src)
        if mix.ndim != 2 or mix.shape[0] != 2:
            raise DataError(f"mixtures must be 2 x T, got {mix.shape}")
        if src.ndim != 2 or src.shape[1] != mix.shape[1]:
            raise DataError(
                f"sources must be M x {mix.shape[1]}, got {src.shape}"
            )
        if src.shape[0] < 2:
            raise DomainError(f"need at least 2 estimated sources, got {src.shape[0]}")


def _reconstruction_loss(mixtures: np.ndarray, estimates: np.ndarray, kind: str) -> float:
    if kind == "mse":
        return float(((mixtures - estimates) ** 2).mean(axis=1).sum())
    if kind == "neg_snr":
        num = (mixtures**2).sum(axis=1)
        den = ((mixtures - estimates) ** 2).sum(axis=1) + SNR_EPS
        return float((-10.0 * np.log10(num / den)).sum())
    raise ConfigError(f"unknown reconstruction loss {kind!r}")


def mixit_loss(mom: MixtureOfMixtures, loss_kind: str = "neg_snr"):
    """Mixture-invariant loss, minimized over source-to-mixture assignments.

    Returns (loss, assignment) where assignment is the 2 x M binary matrix A
    with exactly one 1 per column; the estimated mixtures are A @ sources.
    """
    m = mom.estimated_sources.shape[0]
    if m > MAX_EXHAUSTIVE:
        raise DomainError(f"exhaustive search supports M <= {MAX_EXHAUSTIVE}, got {m}")
    best_loss, best_a = np.inf, None
    for choice in itertools.product((0, 1), repeat=m):
        a = np.zeros((2, m), dtype=np.int64)
        a[choice, np.arange(m)] = 1
        estimates = a @ mom.estimated_sources
        loss = _reconstruction_loss(mom.mixtures, estimates, loss_kind)
        if loss < best_loss:
            best_loss, best_a = loss, a
    return best_loss, best_a


@dataclass(frozen=True)
class PixitWeights:
    """Interpolation weight between the diarization and separation losses."""

    lam: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


def pixit_loss(pit: float, mixit: float, lam: float = 0.1) -> float:
    """Combined loss lam * pit + (1 - lam) * mixit."""
    weights = PixitWeights(lam)
    return weights.lam * pit + (1.0 - weights.lam) * mixit
