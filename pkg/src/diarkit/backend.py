"""Scoring backend: centering, length normalization, LDA, two-covariance
PLDA with simultaneous diagonalization, LLR and cosine similarity.

The PLDA estimate is closed form (class-mean covariance between, pooled
covariance within) rather than EM over latent factors; at the scales this
toolkit targets the closed form is exact enough and it is precisely the
parameterization the VBx refinement consumes.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .embedstore import EmbeddingSet
from .errors import DataError, DomainError

RIDGE = 1e-6
PHI_FLOOR = 1e-8


class EffectiveDimWarning(UserWarning):
    """LDA produced fewer dimensions than requested (rank-limited)."""


def length_normalize(v: np.ndarray) -> np.ndarray:
    """Project vectors (1-D) or matrix rows (2-D) onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DomainError("cannot length-normalize a zero vector")
        return v / norm
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("cannot length-normalize a zero row")
    return v / norms


def _class_partition(labels: Sequence) -> dict:
    classes: dict = {}
    for i, lab in enumerate(labels):
        classes.setdefault(lab, []).append(i)
    return classes


def _scatters(x: np.ndarray, classes: dict):
    mu = x.mean(axis=0)
    dim = x.shape[1]
    sb = np.zeros((dim, dim))
    sw = np.zeros((dim, dim))
    for idx in classes.values():
        xc = x[idx]
        mc = xc.mean(axis=0)
        d = mc - mu
        sb += len(idx) * np.outer(d, d)
        sw += (xc - mc).T @ (xc - mc)
    return mu, sb / len(x), sw / len(x)


def _ridge(m: np.ndarray) -> np.ndarray:
    trace = np.trace(m)
    eps = RIDGE * trace / m.shape[0] if trace > 0 else RIDGE
    return m + eps * np.eye(m.shape[0])


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    # deterministic column signs: largest-magnitude entry positive
    signs = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def train_lda(x, labels, target_dim: int):
    """Fisher LDA on labeled vectors.

    Returns (mu, basis) with basis of shape (dim, effective) where effective
    = min(target_dim, n_classes - 1, dim); columns are Sw-orthonormal
    generalized eigenvectors, strongest direction first. Emits
    EffectiveDimWarning when rank limits the projection below target_dim.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected an N x dim matrix, got shape {x.shape}")
    if len(labels) != len(x):
        raise DataError(f"{len(labels)} labels for {len(x)} vectors")
    if target_dim < 1:
        raise DataError(f"target_dim must be >= 1, got {target_dim}")
    classes = _class_partition(labels)
    if len(classes) < 2:
        raise DataError("LDA needs at least 2 classes")
    if min(len(idx) for idx in classes.values()) < 2:
        raise DataError("LDA needs at least 2 samples per class")

    mu, sb, sw = _scatters(x, classes)
    eigvals, eigvecs = scipy.linalg.eigh(sb, _ridge(sw))
    order = np.argsort(eigvals)[::-1]

    effective = min(target_dim, len(classes) - 1, x.shape[1])
    if effective < target_dim:
        warnings.warn(
            f"LDA limited to {effective} dimensions "
            f"(requested {target_dim}, {len(classes)} classes, input dim {x.shape[1]})",
            EffectiveDimWarning,
            stacklevel=2,
        )
    basis = _fix_signs(eigvecs[:, order[:effective]])
    return mu, basis


@dataclass
class PldaModel:
    """Two-covariance PLDA over LDA-projected, length-normalized embeddings.

    diag_transform maps the r-dim projected space to an R-dim space where
    the within-class covariance is the identity and the between-class
    covariance is diag(phi); this is the space VBx operates in.
    """

    mu: np.ndarray  # dim
    lda_basis: np.ndarray  # dim x r
    between: np.ndarray  # r x r
    within: np.ndarray  # r x r
    diag_transform: np.ndarray  # r x R
    phi: np.ndarray  # R, descending, > 0
    _score_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def lda_dim(self) -> int:
        return self.lda_basis.shape[1]

    @property
    def diag_dim(self) -> int:
        return self.phi.shape[0]

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Center, LDA-project and length-normalize raw embeddings (rows)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DataError(f"expected dim {self.dim}, got {x.shape[1]}")
        return length_normalize((x - self.mu) @ self.lda_basis)

    def to_diag(self, x: np.ndarray) -> np.ndarray:
        """Raw embeddings -> diagonalized VBx feature space."""
        return self.prepare(x) @ self.diag_transform

    def _scoring_terms(self):
        if not self._score_cache:
            r = self.between.shape[0]
            tot = self.between + self.within
            sigma_same = np.block([[tot, self.between], [self.between, tot]])
            inv_same = np.linalg.inv(sigma_same)
            inv_tot = np.linalg.inv(tot)
            self._score_cache["diag_term"] = inv_same[:r, :r] - inv_tot
            self._score_cache["cross_term"] = inv_same[:r, r:]
            self._score_cache["const"] = -0.5 * (
                np.linalg.slogdet(sigma_same)[1] - 2.0 * np.linalg.slogdet(tot)[1]
            )
        c = self._score_cache
        return c["diag_term"], c["cross_term"], c["const"]


def _two_covariance(x: np.ndarray, classes: dict):
    mu = x.mean(axis=0)
    r = x.shape[1]
    between = np.zeros((r, r))
    within = np.zeros((r, r))
    within_dof = 0
    for idx in classes.values():
        xc = x[idx]
        mc = xc.mean(axis=0)
        d = mc - mu
        between += len(idx) * np.outer(d, d)
        if len(idx) >= 2:  # singletons carry no within-class information
            within += (xc - mc).T @ (xc - mc)
            within_dof += len(idx) - 1
    between /= len(x)
    within = within / within_dof if within_dof > 0 else within
    return between, within


def _diagonalize(between: np.ndarray, within: np.ndarray):
    chol = scipy.linalg.cholesky(within, lower=True)
    inv_chol = scipy.linalg.solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    whitened = inv_chol @ between @ inv_chol.T
    eigvals, eigvecs = np.linalg.eigh((whitened + whitened.T) / 2.0)
    order = np.argsort(eigvals)[::-1]
    keep = order[eigvals[order] > PHI_FLOOR]
    phi = eigvals[keep]
    transform = _fix_signs(inv_chol.T @ eigvecs[:, keep])
    return transform, phi


def train_plda(x, labels, mu: np.ndarray | None = None, lda_basis: np.ndarray | None = None) -> PldaModel:
    """Estimate the two-covariance model on already-projected features.

    mu / lda_basis record the preprocessing that produced x; when omitted the
    model scores features in the given space directly (identity projection).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected an N x r matrix, got shape {x.shape}")
    if len(labels) != len(x):
        raise DataError(f"{len(labels)} labels for {len(x)} vectors")
    classes = _class_partition(labels)
    if len(classes) < 2:
        raise DataError("PLDA needs at least 2 classes")

    between, within = _two_covariance(x, classes)
    within = _ridge(within)  # the stored/working within-covariance is regularized
    transform, phi = _diagonalize(between, within)
    _check_diagonalization(between, within, transform, phi)
    r = x.shape[1]
    return PldaModel(
        mu=np.zeros(r) if mu is None else np.asarray(mu, dtype=np.float64),
        lda_basis=np.eye(r) if lda_basis is None else np.asarray(lda_basis, dtype=np.float64),
        between=between,
        within=within,
        diag_transform=transform,
        phi=phi,
    )


def _check_diagonalization(between, within, transform, phi):
    w_diag = transform.T @ within @ transform
    b_diag = transform.T @ between @ transform
    scale = max(1.0, float(np.abs(phi).max(initial=1.0)))
    if (
        np.abs(w_diag - np.eye(len(phi))).max() > 1e-6
        or np.abs(b_diag - np.diag(phi)).max() > 1e-6 * scale
    ):
        raise DataError("simultaneous diagonalization failed the identity check")


def train_backend(embeddings, labels, target_dim: int) -> PldaModel:
    """Full chain: center -> LDA -> length-normalize -> two-covariance PLDA."""
    if isinstance(embeddings, EmbeddingSet):
        x = embeddings.rows.astype(np.float64)
        if labels is None:
            labels = embeddings.true_labels()
    else:
        x = np.asarray(embeddings, dtype=np.float64)
    if labels is None or any(lab is None for lab in labels):
        raise DataError("backend training requires a label for every embedding")
    mu, basis = train_lda(x, labels, target_dim)
    projected = length_normalize((x - mu) @ basis)
    model = train_plda(projected, labels)
    model.mu = mu
    model.lda_basis = basis
    return model


def plda_llr(model: PldaModel, e1, e2) -> float:
    """Same-class vs different-class log-likelihood ratio for two raw embeddings."""
    u = model.prepare(e1)[0]
    v = model.prepare(e2)[0]
    diag_term, cross_term, const = model._scoring_terms()
    return float(
        -0.5 * (u @ diag_term @ u + v @ diag_term @ v + 2.0 * (u @ cross_term @ v))
        + const
    )


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric pairwise scores; consumers ignore the diagonal."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"similarity matrix must be square, got {values.shape}")
        if values.size and np.abs(values - values.T).max() > 1e-9:
            raise DataError("similarity matrix is not symmetric")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def cosine_similarity_matrix(x) -> np.ndarray:
    u = length_normalize(np.asarray(x, dtype=np.float64))
    values = u @ u.T
    return (values + values.T) / 2.0


def plda_similarity_matrix(model: PldaModel, x) -> np.ndarray:
    u = model.prepare(x)
    diag_term, cross_term, const = model._scoring_terms()
    quad = np.einsum("ij,jk,ik->i", u, diag_term, u)
    cross = u @ cross_term @ u.T
    values = -0.5 * (quad[:, None] + quad[None, :] + 2.0 * cross) + const
    return (values + values.T) / 2.0


def similarity_matrix(embeddings, model: PldaModel | None = None, backend: str = "plda") -> SimilarityMatrix:
    """Pairwise similarity for an EmbeddingSet or raw matrix."""
    x = embeddings.rows if isinstance(embeddings, EmbeddingSet) else np.asarray(embeddings)
    if x.shape[0] < 2:
        raise DataError(f"need at least 2 embeddings, got {x.shape[0]}")
    if backend == "cosine":
        return SimilarityMatrix(cosine_similarity_matrix(x))
    if backend == "plda":
        if model is None:
            raise DataError("plda backend requires a trained model")
        return SimilarityMatrix(plda_similarity_matrix(model, x))
    raise DataError(f"unknown scoring backend {backend!r}")


# ---------------------------------------------------------------------------
# Model serialization: versioned JSON header + float32 binary sidecar
# ---------------------------------------------------------------------------

_ARRAY_ORDER = ("mu", "lda_basis", "between", "within", "diag_transform", "phi")


def save_model(model: PldaModel, json_path) -> None:
    json_path = Path(json_path)
    sidecar = json_path.with_suffix(".f32")
    arrays = {name: np.asarray(getattr(model, name), dtype=np.float32) for name in _ARRAY_ORDER}
    blob = b"".join(arrays[name].tobytes(order="C") for name in _ARRAY_ORDER)
    header = {
        "format": "diarkit-plda",
        "version": 1,
        "sidecar": sidecar.name,
        "shapes": {name: list(arrays[name].shape) for name in _ARRAY_ORDER},
    }
    sidecar.write_bytes(struct.pack("<I", len(blob)) + blob)
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_model(json_path) -> PldaModel:
    json_path = Path(json_path)
    try:
        header = json.loads(json_path.read_text())
    except ValueError as exc:
        raise DataError(f"bad model header: {exc}") from None
    if header.get("format") != "diarkit-plda" or header.get("version") != 1:
        raise DataError("unsupported model file")
    blob = (json_path.parent / header["sidecar"]).read_bytes()
    (expected_len,) = struct.unpack("<I", blob[:4])
    blob = blob[4:]
    if len(blob) != expected_len:
        raise DataError("model sidecar is truncated")
    arrays = {}
    offset = 0
    for name in _ARRAY_ORDER:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += 4 * count
    if offset != expected_len:
        raise DataError("model sidecar length mismatch")
    model = PldaModel(**arrays)
    if not all(np.isfinite(arrays[name]).all() for name in _ARRAY_ORDER):
        raise DataError("model contains non-finite values")
    return model
