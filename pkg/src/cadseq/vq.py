"""Latent projection, per-level codebooks and vector quantization.

Raw token features (EB 10-d, SP 6-d, CC 8-d) map through a seeded affine
projection into a shared latent width, where nearest-neighbor quantization
against a trained codebook happens. Codebooks train with Lloyd's k-means
(k-means++ init) or streaming EMA updates; both are deterministic given a
seed. The loss report mirrors a VQ-VAE objective: reconstruction MSE +
cross-entropy, codebook/commitment quantization terms, and a squared loop
closure penalty.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyCodebookError,
    InsufficientDataError,
    IoError,
    ShapeError,
)

CODEBOOK_MAGIC = b"CSFVQ1"

D_LATENT_DEFAULT = 512
EMA_DECAY_DEFAULT = 0.99
COMMIT_WEIGHT = 0.25

# Loss weights: total = W_MSE*mse + W_CE*ce + cb + commit + W_CLOSURE*closure
W_MSE = 1.0
W_CE = 0.5
W_CLOSURE = 1.0

_CE_CLAMP = 1e-12


class Level(Enum):
    EB = "eb"
    SP = "sp"
    CC = "cc"


RAW_DIMS = {Level.EB: 10, Level.SP: 6, Level.CC: 8}

# Column split of each level's raw feature: continuous prefix, categorical
# one-hot suffix (SP has no categorical part).
_CONT_COLS = {Level.EB: 7, Level.SP: 6, Level.CC: 5}


class TrainMode(Enum):
    KMEANS = "kmeans"
    EMA = "ema"


# --------------------------------------------------------------------------
# projection

@dataclass(frozen=True)
class Projection:
    level: Level
    weight: np.ndarray  # (D_latent, D_raw)
    bias: np.ndarray  # (D_latent,)
    seed: int

    @property
    def d_latent(self) -> int:
        return self.weight.shape[0]


def make_projection(level: Level, d_latent: int = D_LATENT_DEFAULT,
                    seed: int = 0) -> Projection:
    """Seeded random affine projection for a level (bias zero).

    Entries are N(0, 1/D_raw) so latent norms stay comparable across levels.
    """
    d_raw = RAW_DIMS[level]
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d_latent, d_raw)) / np.sqrt(d_raw)
    return Projection(level, w, np.zeros(d_latent), seed)


def project(level: Level, raw_feature: Sequence[float] | np.ndarray,
            proj: Projection) -> np.ndarray:
    """Affine map weight @ x + bias; accepts one vector or a (N, D_raw) batch."""
    if proj.level is not level:
        raise DimensionError(f"projection is for {proj.level.value}, not {level.value}")
    x = np.asarray(raw_feature, dtype=np.float64)
    d_raw = RAW_DIMS[level]
    if x.ndim == 1:
        if x.shape[0] != d_raw:
            raise DimensionError(f"{level.value} raw feature must have {d_raw} dims, got {x.shape[0]}")
        return proj.weight @ x + proj.bias
    if x.ndim == 2 and x.shape[1] == d_raw:
        return x @ proj.weight.T + proj.bias
    raise DimensionError(f"{level.value} raw feature must have {d_raw} dims, got shape {x.shape}")


def inverse_project(z: np.ndarray, proj: Projection) -> np.ndarray:
    """Least-squares inverse of the affine map (pseudo-inverse decoder)."""
    z = np.asarray(z, dtype=np.float64)
    pinv = np.linalg.pinv(proj.weight)
    if z.ndim == 1:
        return pinv @ (z - proj.bias)
    return (z - proj.bias) @ pinv.T


# --------------------------------------------------------------------------
# codebook

@dataclass
class Codebook:
    level: Level
    entries: np.ndarray  # (K, D_latent)
    usage_counts: np.ndarray  # (K,) ints
    ema_cluster_size: np.ndarray  # (K,)
    ema_embed_sum: np.ndarray  # (K, D_latent)
    error_history: tuple[float, ...] = field(default=())

    @property
    def k(self) -> int:
        return int(self.entries.shape[0])


def _nearest(z: np.ndarray, entries: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest entries for a (N, D) batch: indices and squared distances.

    Distances are plain elementwise (z - e)^2 sums so results match a
    per-pair scan bit for bit; argmin ties resolve to the smallest index.
    """
    n = z.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = z[lo:hi, None, :] - entries[None, :, :]
        dist = (diff * diff).sum(axis=2)
        best = dist.argmin(axis=1)
        idx[lo:hi] = best
        d2[lo:hi] = dist[np.arange(hi - lo), best]
    return idx, d2


def quantize(z_e: Sequence[float] | np.ndarray, cb: Codebook
             ) -> tuple[int, np.ndarray, tuple[float, float]]:
    """Nearest-neighbor quantization of one latent vector.

    Returns (index, z_q, (vq_codebook_term, vq_commit_term)) with
    vq_codebook_term = |z_e - z_q|^2 and the commit term a quarter of it.
    """
    if cb.k == 0:
        raise EmptyCodebookError("codebook has no entries")
    z = np.asarray(z_e, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != cb.entries.shape[1]:
        raise DimensionError(
            f"latent vector must have {cb.entries.shape[1]} dims, got shape {z.shape}")
    idx, d2 = _nearest(z[None, :], cb.entries)
    i = int(idx[0])
    term = float(d2[0])
    return i, cb.entries[i].copy(), (term, COMMIT_WEIGHT * term)


def quantize_batch(z: np.ndarray, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized quantize: (indices, z_q rows) for a (N, D_latent) batch."""
    if cb.k == 0:
        raise EmptyCodebookError("codebook has no entries")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cb.entries.shape[1]:
        raise DimensionError(
            f"batch must be (N, {cb.entries.shape[1]}), got shape {z.shape}")
    idx, _ = _nearest(z, cb.entries)
    return idx, cb.entries[idx]


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = x[rng.integers(n)]
            continue
        r = rng.random() * total
        centers[j] = x[np.searchsorted(np.cumsum(d2), r).clip(0, n - 1)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _train_kmeans(x: np.ndarray, k: int, iters: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centers = _kmeans_pp_init(x, k, rng)
    assign = np.full(x.shape[0], -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(iters):
        new_assign, d2 = _nearest(x, centers)
        history.append(float(d2.mean()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # moving an empty centroid onto the worst-served point never
                # increases the objective
                centers[j] = x[int(np.argmax(d2))]
                d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    assign, d2 = _nearest(x, centers)
    history.append(float(d2.mean()))
    return centers, assign, history


def _train_ema(x: np.ndarray, k: int, iters: int, decay: float,
               rng: np.random.Generator
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[float]]:
    n = x.shape[0]
    entries = x[rng.choice(n, size=k, replace=False)].copy()
    size = np.ones(k)
    acc = entries * size[:, None]
    history: list[float] = []
    for _ in range(iters):
        assign, d2 = _nearest(x, entries)
        history.append(float(d2.mean()))
        used = np.zeros(k, dtype=bool)
        for i in range(n):
            j = int(assign[i])
            used[j] = True
            size[j] = decay * size[j] + (1.0 - decay)
            acc[j] = decay * acc[j] + (1.0 - decay) * x[i]
            entries[j] = acc[j] / size[j]
        dead = np.flatnonzero(~used)
        if len(dead):
            _, d2 = _nearest(x, entries)
            order = np.argsort(-d2)
            for slot, j in enumerate(dead):
                far = x[int(order[slot % n])]
                entries[j] = far
                size[j] = 1.0 - decay
                acc[j] = (1.0 - decay) * far
    assign, d2 = _nearest(x, entries)
    history.append(float(d2.mean()))
    return entries, assign, size, acc, history


def train_codebook(features: Sequence[Sequence[float]] | np.ndarray,
                   k: int,
                   mode: TrainMode = TrainMode.KMEANS,
                   iters: int = 100,
                   decay: float = EMA_DECAY_DEFAULT,
                   seed: int = 0,
                   level: Level = Level.CC) -> Codebook:
    """Train a K-entry codebook on latent feature rows. Deterministic per seed."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be (N, D_latent), got shape {x.shape}")
    if x.shape[0] < k:
        raise InsufficientDataError(
            f"need at least K={k} feature rows, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    if mode is TrainMode.KMEANS:
        entries, assign, history = _train_kmeans(x, k, iters, rng)
        size = np.zeros(k)
        acc = np.zeros((k, x.shape[1]))
    else:
        entries, assign, size, acc, history = _train_ema(x, k, iters, decay, rng)
    usage = np.bincount(assign, minlength=k).astype(np.int64)
    return Codebook(level, entries, usage, size, acc, tuple(history))


# --------------------------------------------------------------------------
# losses

@dataclass(frozen=True)
class LossReport:
    recon_mse: float
    recon_ce: float
    vq_codebook_term: float
    vq_commit_term: float
    closure: float
    total: float


def _as_rows(a, d: int, name: str) -> np.ndarray:
    x = np.asarray(a, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise ShapeError(f"{name} must have {d} columns, got shape {x.shape}")
    return x


def compute_losses(level: Level,
                   raw,
                   reconstructed,
                   z_e,
                   z_q,
                   cc_closure_residual: float | Sequence[float] = 0.0) -> LossReport:
    """Loss report over raw vs reconstructed feature rows of one level.

    Continuous columns feed the MSE; categorical one-hot columns feed the
    cross-entropy (natural log, predictions clamped to [1e-12, 1]); the VQ
    terms are per-row means of |z_e - z_q|^2 and its commitment quarter;
    closure is the squared residual (mean of squares for a batch of loops).
    """
    d = RAW_DIMS[level]
    t = _as_rows(raw, d, "raw")
    p = _as_rows(reconstructed, d, "reconstructed")
    if t.shape != p.shape:
        raise ShapeError(f"raw {t.shape} vs reconstructed {p.shape} mismatch")
    ze = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    zq = np.atleast_2d(np.asarray(z_q, dtype=np.float64))
    if ze.shape != zq.shape:
        raise ShapeError(f"z_e {ze.shape} vs z_q {zq.shape} mismatch")

    nc = _CONT_COLS[level]
    mse = float(((t[:, :nc] - p[:, :nc]) ** 2).mean())
    if nc < d:
        probs = np.clip(p[:, nc:], _CE_CLAMP, 1.0)
        ce = float(-(t[:, nc:] * np.log(probs)).sum(axis=1).mean())
    else:
        ce = 0.0
    cb_term = float(((ze - zq) ** 2).sum(axis=1).mean())
    commit = COMMIT_WEIGHT * cb_term
    resid = np.atleast_1d(np.asarray(cc_closure_residual, dtype=np.float64))
    closure = float((resid ** 2).mean())
    total = W_MSE * mse + W_CE * ce + cb_term + commit + W_CLOSURE * closure
    return LossReport(mse, ce, cb_term, commit, closure, total)


# --------------------------------------------------------------------------
# persistence

_LEVEL_TAGS = {Level.EB: 0, Level.SP: 1, Level.CC: 2}
_TAG_LEVELS = {v: k for k, v in _LEVEL_TAGS.items()}


def save_codebook(cb: Codebook, path: str | Path,
                  sidecar: dict | None = None) -> None:
    """Persist entries to a binary file plus a JSON sidecar (seed/mode/decay
    and whatever extra pairing info the caller supplies)."""
    a = np.ascontiguousarray(cb.entries, dtype=np.float64)
    try:
        with open(path, "wb") as f:
            f.write(CODEBOOK_MAGIC)
            f.write(struct.pack("<iii", _LEVEL_TAGS[cb.level], a.shape[0], a.shape[1]))
            f.write(a.tobytes())
        meta = {"level": cb.level.value}
        if sidecar:
            meta.update(sidecar)
        with open(str(path) + ".json", "w") as f:
            json.dump(meta, f, indent=2)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_codebook(path: str | Path) -> tuple[Codebook, dict]:
    """Load a codebook and its sidecar metadata (empty dict when missing)."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not blob.startswith(CODEBOOK_MAGIC):
        raise IoError(f"{path}: bad magic, not a codebook file")
    off = len(CODEBOOK_MAGIC)
    tag, k, d = struct.unpack_from("<iii", blob, off)
    off += 12
    if tag not in _TAG_LEVELS or k < 0 or d < 0:
        raise IoError(f"{path}: invalid codebook header")
    data = np.frombuffer(blob, dtype="<f8", count=k * d, offset=off)
    entries = data.reshape(k, d).copy()
    meta: dict = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise IoError(f"cannot read sidecar {sidecar}: {e}") from e
    cb = Codebook(
        _TAG_LEVELS[tag], entries,
        np.zeros(k, dtype=np.int64), np.zeros(k), np.zeros((k, d)),
    )
    return cb, meta
