"""Symmetric contrastive (InfoNCE) loss between sequence and point-cloud
embedding batches, with analytic gradients.

The pooled form is implemented literally: every one of the 2B embeddings
anchors one term whose denominator ranges over all other pooled embeddings,
so same-modality rows act as negatives too. A cross-modality-only variant
(CLIP style) is available behind a flag for comparison. All terms use
cosine similarity; the loss is the mean over the 2B anchors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import read_matrix, write_matrix
from .errors import DimensionError, ZeroVectorError


@dataclass
class EmbeddingBatch:
    z_cloud: np.ndarray  # (B, D)
    z_seq: np.ndarray  # (B, D)
    tau: float

    def __post_init__(self) -> None:
        self.z_cloud = np.asarray(self.z_cloud, dtype=np.float64)
        self.z_seq = np.asarray(self.z_seq, dtype=np.float64)
        if self.z_cloud.ndim != 2 or self.z_seq.ndim != 2:
            raise DimensionError("embeddings must be B x D matrices")
        if self.z_cloud.shape != self.z_seq.shape:
            raise DimensionError(
                f"batch shapes differ: {self.z_cloud.shape} vs {self.z_seq.shape}")
        if len(self.z_cloud) < 1:
            raise DimensionError("batch must contain at least one pair")
        if not self.tau > 0:
            raise DimensionError(f"temperature must be positive, got {self.tau}")


@dataclass
class InfoNceResult:
    loss: float
    logits: np.ndarray  # (2B, 2B) cosine similarities over the pooled batch
    positives: np.ndarray  # (2B,) index of each anchor's positive partner


@dataclass
class AlignGrads:
    d_cloud: np.ndarray
    d_seq: np.ndarray
    d_tau: float


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionError("vectors must have equal length")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _pooled_unit(batch: EmbeddingBatch) -> tuple[np.ndarray, np.ndarray]:
    """Stack [z_seq; z_cloud] and normalize rows; returns (unit, norms)."""
    z = np.concatenate([batch.z_seq, batch.z_cloud], axis=0)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("embedding row with zero norm")
    return z / norms[:, None], norms


def _candidate_mask(b: int, cross_modal_only: bool) -> np.ndarray:
    """mask[a, k] = True where k competes in anchor a's denominator."""
    n = 2 * b
    if cross_modal_only:
        mask = np.zeros((n, n), dtype=bool)
        mask[:b, b:] = True
        mask[b:, :b] = True
    else:
        mask = ~np.eye(n, dtype=bool)
    return mask


def info_nce(batch: EmbeddingBatch, cross_modal_only: bool = False
             ) -> InfoNceResult:
    """Mean over 2B anchors of -log softmax mass on the positive pair.

    Per anchor: numerator exp(sim(anchor, positive)/tau), denominator the
    sum of exp(sim(anchor, k)/tau) over every other pooled embedding
    (opposite modality only when cross_modal_only). Log-sum-exp uses a
    max shift. B = 1 in pooled mode has the positive as the only
    candidate, so the loss is exactly 0.
    """
    b = len(batch.z_seq)
    unit, _ = _pooled_unit(batch)
    sims = unit @ unit.T
    pos = np.concatenate([np.arange(b) + b, np.arange(b)])
    mask = _candidate_mask(b, cross_modal_only)

    a = sims / batch.tau
    neg_inf = -np.inf
    masked = np.where(mask, a, neg_inf)
    shift = masked.max(axis=1)
    lse = shift + np.log(np.exp(masked - shift[:, None]).sum(axis=1))
    pos_logit = a[np.arange(2 * b), pos]
    loss = float(np.mean(lse - pos_logit))
    return InfoNceResult(loss, sims, pos)


def info_nce_grad(batch: EmbeddingBatch, cross_modal_only: bool = False
                  ) -> AlignGrads:
    """Analytic gradient of info_nce w.r.t. z_cloud, z_seq, and tau."""
    b = len(batch.z_seq)
    n = 2 * b
    unit, norms = _pooled_unit(batch)
    sims = unit @ unit.T
    pos = np.concatenate([np.arange(b) + b, np.arange(b)])
    mask = _candidate_mask(b, cross_modal_only)

    a = sims / batch.tau
    masked = np.where(mask, a, -np.inf)
    shift = masked.max(axis=1)
    w = np.exp(masked - shift[:, None])
    w /= w.sum(axis=1, keepdims=True)  # softmax over candidates per anchor

    g_a = w.copy()
    g_a[np.arange(n), pos] -= 1.0
    g_a /= n * batch.tau  # dL/dA[a, k] for k in candidates

    d_unit = (g_a + g_a.T) @ unit
    # pull back through row normalization z -> z/|z|
    radial = np.einsum("ij,ij->i", d_unit, unit)
    d_z = (d_unit - radial[:, None] * unit) / norms[:, None]

    # dL/dtau = (1/(2B tau^2)) * sum_a (A[a,pos] - sum_k w[a,k] A[a,k])
    d_tau = float((sims[np.arange(n), pos].sum()
                   - np.sum(w * sims, axis=1).sum()) / (n * batch.tau ** 2))
    return AlignGrads(d_z[b:], d_z[:b], d_tau)


def save_embeddings(path: str | Path, z: np.ndarray) -> None:
    write_matrix(path, np.asarray(z, dtype=np.float64))


def load_embeddings(path: str | Path) -> np.ndarray:
    return read_matrix(path)
