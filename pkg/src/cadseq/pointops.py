"""Point-cloud importance scoring, mixture resampling, and PLY/XYZ io.

Scores come from a geometric estimator (PCA surface variation over k-NN
neighborhoods) rather than a learned network; the resampling law they feed
is a Boltzmann/coverage mixture and is exposed separately so other score
providers can plug in.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhoodError,
    InvalidDistributionError,
    IoError,
    SampleSizeError,
    ShapeError,
)

DEFAULT_LAMBDA = 0.7
DEFAULT_BETA = 5.0
DEFAULT_K = 16


@dataclass
class ScoredCloud:
    points: np.ndarray  # (N, 3)
    scores: np.ndarray  # (N,) in [0, 1]


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise ShapeError("points must be an N x 3 array with N >= 1")
    return pts


def importance_score(points, k: int = DEFAULT_K) -> ScoredCloud:
    """Surface-variation score per point from its k nearest neighbors.

    s_i = lambda_min / (lambda_1 + lambda_2 + lambda_3) of the neighbor
    covariance, rescaled so the batch max is 1 (an all-zero batch, e.g. a
    plane, stays zero). High values mark edges and corners.
    """
    pts = _as_points(points)
    n = len(pts)
    if not (n > k >= 4):
        raise ShapeError(f"need N > k >= 4, got N={n}, k={k}")
    tree = cKDTree(pts)
    # nearest neighbor of each point is itself; drop that column
    _, idx = tree.query(pts, k=k + 1)
    neigh = pts[idx[:, 1:]]  # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals = np.linalg.eigvalsh(cov)  # ascending
    trace = evals.sum(axis=1)
    if np.any(trace <= 0):
        i = int(np.argmax(trace <= 0))
        raise DegenerateNeighborhoodError(
            f"all {k} neighbors of point {i} coincide")
    raw = evals[:, 0] / trace
    top = raw.max()
    scores = raw / top if top > 0 else raw
    return ScoredCloud(pts, np.clip(scores, 0.0, 1.0))


def resample_distribution(scores, lam: float, beta: float) -> np.ndarray:
    """Mixture p_i = lam * softmax(beta * s)_i + (1 - lam)/N.

    lam trades saliency against uniform coverage; every point keeps
    probability at least (1 - lam)/N.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(s) < 1:
        raise ShapeError("scores must be non-empty")
    if not (0.0 <= lam <= 1.0):
        raise InvalidDistributionError(f"lambda must be in [0, 1], got {lam}")
    if beta < 0.0:
        raise InvalidDistributionError(f"beta must be >= 0, got {beta}")
    z = beta * s
    z -= z.max()
    e = np.exp(z)
    soft = e / e.sum()
    return lam * soft + (1.0 - lam) / len(s)


def resample(cloud: ScoredCloud, m: int, lam: float = DEFAULT_LAMBDA,
             beta: float = DEFAULT_BETA, seed: int = 0,
             replacement: bool = False) -> np.ndarray:
    """Draw m points under the saliency/coverage mixture distribution.

    Without replacement the draws are sequential with renormalization
    after each pick, so results are exactly reproducible per seed.
    """
    pts = _as_points(cloud.points)
    p = resample_distribution(cloud.scores, lam, beta)
    if len(p) != len(pts):
        raise ShapeError("scores and points length mismatch")
    if m < 0:
        raise SampleSizeError("sample size must be >= 0")
    rng = np.random.default_rng(seed)
    if replacement:
        idx = rng.choice(len(pts), size=m, replace=True, p=p)
        return pts[idx]
    if m > len(pts):
        raise SampleSizeError(
            f"cannot draw {m} from {len(pts)} points without replacement")
    weights = p.copy()
    picked = np.empty(m, dtype=np.int64)
    for j in range(m):
        total = weights.sum()
        cum = np.cumsum(weights)
        u = rng.random() * total
        i = int(np.searchsorted(cum, u))
        i = min(i, len(weights) - 1)
        while weights[i] == 0.0:  # guard against fp edge at boundaries
            i = (i + 1) % len(weights)
        picked[j] = i
        weights[i] = 0.0
    return pts[picked]


# --------------------------------------------------------------------------
# io

_PLY_TYPES = {"float": ("<f4", 4), "float32": ("<f4", 4),
              "double": ("<f8", 8), "float64": ("<f8", 8)}


def write_ply(path: str | Path, points, scores=None) -> None:
    """Binary little-endian PLY; scores go into a double `quality` property."""
    pts = _as_points(points)
    props = ["property double x", "property double y", "property double z"]
    cols = [pts]
    if scores is not None:
        s = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
        if len(s) != len(pts):
            raise ShapeError("scores and points length mismatch")
        props.append("property double quality")
        cols.append(s)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n" + "\n".join(props) + "\nend_header\n"
    )
    body = np.ascontiguousarray(np.hstack(cols), dtype="<f8").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(body)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_ply(path: str | Path) -> ScoredCloud:
    """Read a binary little-endian PLY; missing quality yields zero scores."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise IoError(f"{path}: not a ply file")
    header = blob[:end].decode("ascii", "replace").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise IoError(f"{path}: only binary_little_endian 1.0 is supported")
    n = None
    fields: list[tuple[str, str, int]] = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "element" and n is not None and fields:
            break  # only the vertex element is read
        elif parts[:1] == ["property"] and n is not None:
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise IoError(f"{path}: unsupported property {line!r}")
            dt, size = _PLY_TYPES[parts[1]]
            fields.append((parts[2], dt, size))
    if n is None or not fields:
        raise IoError(f"{path}: missing vertex element")
    names = [f[0] for f in fields]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise IoError(f"{path}: vertex element lacks {axis}")
    dtype = np.dtype([(name, dt) for name, dt, _ in fields])
    data = np.frombuffer(blob[end + len(b"end_header\n"):],
                         dtype=dtype, count=n)
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    scores = (data["quality"].astype(np.float64) if "quality" in names
              else np.zeros(n))
    return ScoredCloud(pts, scores)


def write_xyz(path: str | Path, points) -> None:
    pts = _as_points(points)
    try:
        with open(path, "w") as f:
            for x, y, z in pts:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_xyz(path: str | Path) -> np.ndarray:
    try:
        pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise IoError(f"{path}: malformed xyz data: {e}") from e
    if pts.size == 0:
        raise IoError(f"{path}: empty point cloud")
    if pts.shape[1] < 3:
        raise IoError(f"{path}: expected at least 3 columns")
    return pts[:, :3]
