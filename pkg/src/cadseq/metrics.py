"""Geometry and population metrics over point sets, meshes, and sampled
solids: chamfer distance, hanging-face ratio, segmentation accuracy,
primitive precision/recall, set-level MMD/COV/JSD, and the validity /
novelty / uniqueness ratios for generated batches.

Nearest-neighbor terms use a k-d tree; distances are Euclidean, never
squared. Population metrics expect shapes already normalized to the
[-1, 1] cube (see normalize_points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMeshError, EmptySetError, ShapeError
from .geomkernel import SolidSample, TriMesh, decompose_sample

DEFAULT_N_POINTS = 10000
DEFAULT_MATCH_THRESHOLD = 0.1
DEFAULT_VOXEL_GRID = 28
DEFAULT_DUP_THRESHOLD = 0.02


@dataclass
class MetricConfig:
    n_points: int = DEFAULT_N_POINTS
    match_threshold: float = DEFAULT_MATCH_THRESHOLD
    voxel_grid: int = DEFAULT_VOXEL_GRID
    dup_threshold: float = DEFAULT_DUP_THRESHOLD
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 1 or self.match_threshold <= 0 \
                or self.dup_threshold <= 0:
            raise ValueError("metric thresholds and sizes must be positive")
        if self.voxel_grid < 2:
            raise ValueError("voxel grid needs at least 2 cells per axis")


def _pts(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be an N x D point array")
    if len(x) == 0:
        raise EmptySetError(f"{name} is empty")
    return x


def chamfer(a, b) -> float:
    """Symmetric chamfer distance: half the sum of the two one-way mean
    nearest-neighbor Euclidean distances."""
    acc, comp = acc_comp(a, b)
    return 0.5 * (acc + comp)


def acc_comp(gen, gt) -> tuple[float, float]:
    """One-way mean nearest distances: (gen -> gt, gt -> gen)."""
    gen = _pts(gen, "generated point set")
    gt = _pts(gt, "reference point set")
    if gen.shape[1] != gt.shape[1]:
        raise ShapeError("point sets must share one dimensionality")
    acc = float(cKDTree(gt).query(gen)[0].mean())
    comp = float(cKDTree(gen).query(gt)[0].mean())
    return acc, comp


def hanging_faces(m: TriMesh) -> float:
    """Fraction of faces owning at least one edge not shared by exactly
    two faces. Zero for watertight 2-manifold meshes."""
    tris = np.asarray(m.triangles, dtype=np.int64)
    if len(tris) == 0:
        raise EmptyMeshError("mesh has no faces")
    edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inv, counts = np.unique(edges, axis=0, return_inverse=True,
                                  return_counts=True)
    open_edge = counts[inv.reshape(-1)] != 2
    hanging = open_edge.reshape(-1, 3).any(axis=1)
    return float(hanging.mean())


def seg_accuracy(pred: SolidSample, gt: SolidSample) -> float:
    """Label every reference point with its nearest predicted point's
    primitive label; return the fraction of correct labels."""
    p = _pts(pred.points, "predicted sample")
    g = _pts(gt.points, "reference sample")
    idx = cKDTree(p).query(g)[1]
    return float((pred.primitive_label[idx] == gt.primitive_label).mean())


def _face_sets(sample) -> list[np.ndarray]:
    if isinstance(sample, SolidSample):
        return decompose_sample(sample)
    return [np.asarray(f, dtype=np.float64) for f in sample]


def primitive_pr(gen, gt,
                 cfg: MetricConfig | None = None) -> tuple[float, float]:
    """Greedy one-to-one matching of per-primitive-face point subsets by
    ascending chamfer distance; a pair matches below cfg.match_threshold.
    Returns (precision, recall). Accepts SolidSamples (decomposed here)
    or pre-split lists of per-face point arrays."""
    cfg = cfg or MetricConfig()
    gen_faces = _face_sets(gen)
    gt_faces = _face_sets(gt)
    if not gen_faces or not gt_faces:
        raise EmptySetError("primitive matching needs faces on both sides")
    cds = np.array([[chamfer(a, b) for b in gt_faces] for a in gen_faces])
    gen_used = np.zeros(len(gen_faces), dtype=bool)
    gt_used = np.zeros(len(gt_faces), dtype=bool)
    matched = 0
    for flat in np.argsort(cds, axis=None):
        i, j = divmod(int(flat), len(gt_faces))
        if cds[i, j] >= cfg.match_threshold:
            break
        if not gen_used[i] and not gt_used[j]:
            gen_used[i] = gt_used[j] = True
            matched += 1
    return matched / len(gen_faces), matched / len(gt_faces)


def normalize_points(points) -> np.ndarray:
    """Center a point set and scale its longest bbox side to span
    [-1, 1]. Degenerate (single-point) sets map to the origin."""
    points = _pts(points, "point set")
    lo, hi = points.min(axis=0), points.max(axis=0)
    half = (hi - lo).max() / 2.0
    center = (lo + hi) / 2.0
    if half == 0.0:
        return np.zeros_like(points)
    return (points - center) / half


def _occupancy(sets: list[np.ndarray], grid: int) -> np.ndarray:
    """Mean voxel occupancy over shapes on a grid^3 lattice spanning
    [-1, 1]^3, normalized to a probability vector."""
    occ = np.zeros(grid ** 3, dtype=np.float64)
    for pts in sets:
        idx = np.clip(((pts + 1.0) * 0.5 * grid).astype(np.int64), 0, grid - 1)
        flat = np.unique(idx[:, 0] * grid * grid + idx[:, 1] * grid + idx[:, 2])
        occ[flat] += 1.0
    occ /= len(sets)
    total = occ.sum()
    return occ / total


def _jsd(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)
    def kl(a):
        nz = a > 0
        return float((a[nz] * np.log(a[nz] / m[nz])).sum())
    return 0.5 * kl(p) + 0.5 * kl(q)


def population_metrics(gen_set, ref_set, cfg: MetricConfig | None = None,
                       mmd_gen_to_ref: bool = False) -> dict[str, float]:
    """Set-level fidelity and diversity.

    mmd: mean over references of the chamfer distance to the closest
    generated shape (flip the direction with mmd_gen_to_ref). cov:
    fraction of references that are the nearest reference of at least one
    generated shape. jsd: divergence between mean voxel-occupancy
    distributions on a voxel_grid^3 lattice over [-1, 1]^3, natural log.
    """
    cfg = cfg or MetricConfig()
    gen_set = [_pts(g, "generated shape") for g in gen_set]
    ref_set = [_pts(r, "reference shape") for r in ref_set]
    if not gen_set or not ref_set:
        raise EmptySetError("population metrics need non-empty shape sets")
    cds = np.array([[chamfer(g, r) for r in ref_set] for g in gen_set])
    mmd = cds.min(axis=1).mean() if mmd_gen_to_ref else cds.min(axis=0).mean()
    cov = len(np.unique(cds.argmin(axis=1))) / len(ref_set)
    jsd = _jsd(_occupancy(gen_set, cfg.voxel_grid),
               _occupancy(ref_set, cfg.voxel_grid))
    return {"mmd": float(mmd), "cov": float(cov), "jsd": float(jsd)}


def validity_novelty_uniqueness(gen, train_set,
                                cfg: MetricConfig | None = None
                                ) -> dict[str, float]:
    """Batch health ratios. gen lists one entry per generated shape: a
    point array if it compiled, None if compilation failed.

    ir: failed / total. nov: fraction of valid shapes at least
    dup_threshold (chamfer) away from every training shape. uniq:
    fraction of valid shapes with no earlier valid duplicate (first
    occurrence counts). With zero valid shapes both ratios are 0.
    """
    cfg = cfg or MetricConfig()
    if len(gen) == 0:
        raise EmptySetError("generated batch is empty")
    valid = [_pts(g, "generated shape") for g in gen if g is not None]
    ir = (len(gen) - len(valid)) / len(gen)
    train = [_pts(t, "training shape") for t in train_set]
    if not valid:
        return {"ir": float(ir), "nov": 0.0, "uniq": 0.0}
    novel = 0
    for v in valid:
        if all(chamfer(v, t) >= cfg.dup_threshold for t in train):
            novel += 1
    unique = 0
    for i, v in enumerate(valid):
        if all(chamfer(v, valid[j]) >= cfg.dup_threshold for j in range(i)):
            unique += 1
    return {"ir": float(ir), "nov": novel / len(valid),
            "uniq": unique / len(valid)}
