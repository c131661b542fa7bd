"""Solid geometry kernel: sketch validation, tessellation, extrusion,
membership-based CSG, surface sampling and export.

Booleans are evaluated by membership (generalized winding numbers against
each block's closed prism mesh), never by exact B-rep surgery: a surface
point belongs to the composite boundary iff stepping eps_surf along the
surface normal lands Inside on one side and Outside on the other.

Determinism: sketch rings snap to a dyadic 2^-30 grid before
triangulation, so programs that agree to ~1e-9 (e.g. a program and its
token round trip) tessellate and sample identically, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon

from . import canonize
from .cadprog import (
    Arc,
    BooleanOp,
    CadProgram,
    Circle,
    Curve,
    ExtrudeBlock,
    Line,
    Loop,
    arc_params,
    arc_point,
    serialize_program,
)
from .errors import (
    EmptySolidError,
    IoError,
    NestingError,
    OpenMeshError,
    SelfIntersectionError,
    TessellationError,
)

EPS_SURF = 1e-5

# dyadic snap grid for sketch coordinates fed to the triangulator
_GRID = 2.0 ** -30

DEFAULT_N_POINTS = 4096


@dataclass(frozen=True)
class Deflections:
    linear: float = 0.001
    angular: float = 0.1


class Primitive(IntEnum):
    PLANAR_CAP = 0
    CYLINDRICAL_SIDE = 1
    PLANAR_SIDE = 2


class Membership(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ON_BOUNDARY = "on_boundary"


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    face_primitive: np.ndarray  # (T,) int64 of Primitive values
    face_id: np.ndarray  # (T,) int64, one id per connected primitive face


@dataclass
class SolidSample:
    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3) outward unit
    primitive_label: np.ndarray  # (N,) int64 of Primitive values
    source_block: np.ndarray  # (N,) int64
    face_id: np.ndarray  # (N,) int64


@dataclass(frozen=True)
class Face:
    outer: Loop
    holes: tuple[Loop, ...]


@dataclass
class Tessellation2D:
    coords: np.ndarray  # (M, 2) snapped ring vertices
    triangles: np.ndarray  # (K, 3) indices, CCW
    # boundary segments (i, j, primitive, ring_index, curve_index)
    boundary: list[tuple[int, int, int, int, int]]
    analytic_area: float


# --------------------------------------------------------------------------
# sketch validation

def _classification_rings(loops: Sequence[Loop]) -> list[np.ndarray]:
    from .cadprog import loop_polyline

    return [np.array(loop_polyline(lp, segments_per_arc=48), dtype=np.float64)
            for lp in loops]


def validate_sketch(loops: Sequence[Loop]) -> list[Face]:
    """Classify loops into faces (outer + holes) by containment parity.

    Rejects self-intersecting loops and loop pairs whose boundaries touch
    or cross. Loop orientation is normalized (outer CCW, holes CW) on the
    returned faces.
    """
    if not loops:
        raise NestingError("sketch has no loops")
    rings = _classification_rings(loops)
    polys = []
    for i, ring in enumerate(rings):
        poly = Polygon(ring)
        if not poly.is_valid:
            raise SelfIntersectionError(f"loop {i} self-intersects")
        polys.append(poly)
    for i in range(len(loops)):
        for j in range(i + 1, len(loops)):
            if polys[i].boundary.intersects(polys[j].boundary):
                raise SelfIntersectionError(f"loops {i} and {j} intersect")

    depth = [0] * len(loops)
    parents: list[list[int]] = [[] for _ in loops]
    for i in range(len(loops)):
        pt = shapely.points(rings[i][0])
        for j in range(len(loops)):
            if i != j and polys[j].contains(pt):
                depth[i] += 1
                parents[i].append(j)

    faces: dict[int, list[Loop]] = {}
    hole_assign: list[tuple[int, Loop]] = []
    for i, lp in enumerate(loops):
        if depth[i] % 2 == 0:
            oriented = lp if lp.is_circle() or lp.signed_area() > 0 else lp.reversed()
            faces[i] = [oriented]
        else:
            outer_parents = [j for j in parents[i] if depth[j] == depth[i] - 1]
            if not outer_parents:
                raise NestingError(f"hole loop {i} is outside any outer loop")
            parent = min(outer_parents, key=lambda j: polys[j].area)
            oriented = lp if lp.is_circle() or lp.signed_area() < 0 else lp.reversed()
            hole_assign.append((parent, oriented))
    for parent, hole in hole_assign:
        if parent not in faces:
            raise NestingError("hole nests under another hole")
        faces[parent].append(hole)
    return [Face(group[0], tuple(group[1:])) for _, group in sorted(faces.items())]


# --------------------------------------------------------------------------
# tessellation

def _snap(x: float) -> float:
    return round(x / _GRID) * _GRID


def _arc_segment_count(radius: float, sweep: float, d: Deflections) -> int:
    if d.linear < 2.0 * radius:
        sag = 2.0 * math.acos(max(-1.0, 1.0 - d.linear / radius))
        step = min(d.angular, sag)
    else:
        step = d.angular
    return max(1, math.ceil(abs(sweep) / step))


def _discretize_curve(c: Curve, d: Deflections) -> list[tuple[float, float]]:
    """Points along a curve from its start, excluding the end point."""
    if isinstance(c, Line):
        return [c.start]
    if isinstance(c, Arc):
        center, r, sweep, a0 = arc_params(c)
        n = _arc_segment_count(r, sweep, d)
        return [arc_point(center, r, a0 + sweep * i / n) for i in range(n)]
    n = _arc_segment_count(c.radius, math.tau, d)
    return [arc_point(c.center, c.radius, math.tau * i / n) for i in range(n)]


def _loop_ring(lp: Loop, d: Deflections, reverse: bool
               ) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Snapped ring coordinates and per-segment source-curve indices.

    Segments are (curve_index, primitive) aligned with ring edge k -> k+1.
    """
    pts: list[tuple[float, float]] = []
    seg_curve: list[tuple[int, int]] = []
    for ci, c in enumerate(lp.curves):
        prim = Primitive.PLANAR_SIDE if isinstance(c, Line) else Primitive.CYLINDRICAL_SIDE
        cpts = _discretize_curve(c, d)
        pts.extend(cpts)
        seg_curve.extend([(ci, int(prim))] * len(cpts))
    ring = np.array([( _snap(x), _snap(y)) for x, y in pts], dtype=np.float64)
    if reverse:
        # keep the start point, reverse traversal; segment k of the reversed
        # ring covers original segment n-1-k
        ring = np.concatenate([ring[:1], ring[1:][::-1]])
        seg_curve = seg_curve[::-1]
    return _dedupe_ring(ring, seg_curve)


def _face_area(face: Face) -> float:
    area = abs(face.outer.signed_area())
    for h in face.holes:
        area -= abs(h.signed_area())
    return area


def _dedupe_ring(ring: np.ndarray, segs: list[tuple[int, int]]
                 ) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Drop zero-length edges a snap collision may have produced."""
    pts: list[np.ndarray] = []
    meta: list[tuple[int, int]] = []
    for k in range(len(ring)):
        if pts and ring[k][0] == pts[-1][0] and ring[k][1] == pts[-1][1]:
            meta[-1] = segs[k]
            continue
        pts.append(ring[k])
        meta.append(segs[k])
    if len(pts) > 1 and pts[0][0] == pts[-1][0] and pts[0][1] == pts[-1][1]:
        last = meta.pop()
        pts.pop()
        meta[-1] = last
    return np.array(pts), meta


def _bridge_holes(coords: np.ndarray, outer: list[int],
                  holes: list[list[int]]) -> list[int]:
    """Merge hole rings (CW) into the outer ring (CCW) with bridge edges.

    Standard rightmost-vertex bridging: each hole connects through its
    max-x vertex to a visible vertex of the current polygon.
    """
    poly = list(outer)
    for hole in sorted(holes, key=lambda h: -max(coords[i][0] for i in h)):
        hi = max(range(len(hole)), key=lambda k: (coords[hole[k]][0], coords[hole[k]][1]))
        hx, hy = coords[hole[hi]]
        # closest intersection of the +x ray with polygon edges
        best_t = math.inf
        best_pos = -1
        n = len(poly)
        for k in range(n):
            ax, ay = coords[poly[k]]
            bx, by = coords[poly[(k + 1) % n]]
            if (ay - hy) * (by - hy) > 0 or ay == by:
                continue
            t = ax + (bx - ax) * (hy - ay) / (by - ay)
            if t >= hx - 1e-12 and t < best_t:
                best_t = t
                # connect to the edge endpoint lying right of the ray hit
                best_pos = k if ax > bx else (k + 1) % n
        if best_pos < 0:
            raise TessellationError("hole bridging failed")
        # visibility can be blocked by a reflex vertex inside the triangle
        # (hole vertex, ray hit, candidate); bridge to the blocker closest
        # in angle to the ray instead
        m = (hx, hy)
        hit = (best_t, hy)
        cand = tuple(coords[poly[best_pos]])
        sgn = 1.0 if _orient(m, hit, cand) >= 0 else -1.0
        blockers = []
        for k in range(n):
            prv = coords[poly[(k - 1) % n]]
            cur = coords[poly[k]]
            nxt = coords[poly[(k + 1) % n]]
            if _orient(prv, cur, nxt) >= 0:
                continue  # convex vertex cannot block
            q = (cur[0], cur[1])
            if q == m or q == cand:
                continue
            if (sgn * _orient(m, hit, q) >= 0
                    and sgn * _orient(hit, cand, q) >= 0
                    and sgn * _orient(cand, m, q) >= 0):
                blockers.append(k)
        if blockers:
            best_pos = min(
                blockers,
                key=lambda k: (abs(math.atan2(coords[poly[k]][1] - hy,
                                              coords[poly[k]][0] - hx)),
                               (coords[poly[k]][0] - hx) ** 2
                               + (coords[poly[k]][1] - hy) ** 2),
            )
        rotated = hole[hi:] + hole[:hi]
        poly = (poly[:best_pos + 1] + rotated + [rotated[0]] + poly[best_pos:])
    return poly


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _ear_clip(coords: np.ndarray, poly: list[int]) -> list[tuple[int, int, int]]:
    """Deterministic ear clipping of a CCW polygon given by vertex indices.

    Combinatorial choices rest on orientation and strict-interior tests
    with healthy margins, so near-identical rings triangulate identically;
    repeated indices from hole bridges are fine.
    """
    idx = list(poly)
    tris: list[tuple[int, int, int]] = []
    if len(idx) < 3:
        raise TessellationError("polygon has fewer than 3 vertices")
    stall = 0
    while len(idx) > 3:
        n = len(idx)
        clipped = False
        for k in range(n):
            a, b, c = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            pa, pb, pc = coords[a], coords[b], coords[c]
            area2 = _orient(pa, pb, pc)
            if area2 <= 1e-14:
                continue
            others = np.array([i for i in idx if i not in (a, b, c)], dtype=np.int64)
            if len(others):
                pts = coords[others]
                d0 = (pb[0] - pa[0]) * (pts[:, 1] - pa[1]) - (pb[1] - pa[1]) * (pts[:, 0] - pa[0])
                d1 = (pc[0] - pb[0]) * (pts[:, 1] - pb[1]) - (pc[1] - pb[1]) * (pts[:, 0] - pb[0])
                d2 = (pa[0] - pc[0]) * (pts[:, 1] - pc[1]) - (pa[1] - pc[1]) * (pts[:, 0] - pc[0])
                eps = 1e-12 * area2
                # a vertex exactly on the chord c->a also blocks: clipping
                # would thread the new boundary edge through it
                inside = (d0 > eps) & (d1 > eps) & (d2 > -eps)
                # bridge duplicates share coordinates with corners; those
                # exact copies are not blockers
                if inside.any():
                    blk = pts[inside]
                    dup = np.zeros(len(blk), dtype=bool)
                    for q in (pa, pb, pc):
                        dup |= (blk[:, 0] == q[0]) & (blk[:, 1] == q[1])
                    if not dup.all():
                        continue
            tris.append((a, b, c))
            del idx[k]
            clipped = True
            break
        if not clipped:
            stall += 1
            if stall > 2:
                raise TessellationError("ear clipping failed")
        else:
            stall = 0
    a, b, c = idx
    if _orient(coords[a], coords[b], coords[c]) <= 1e-14:
        raise TessellationError("degenerate final triangle")
    tris.append((a, b, c))
    return tris


def tessellate_sketch(face: Face, deflections: Deflections = Deflections()
                      ) -> Tessellation2D:
    """Discretize and triangulate a face (outer ring CCW, hole rings CW).

    Triangulation is ear clipping over the ring vertices only (holes are
    bridged in), so it is deterministic, adds no interior vertices, and its
    combinatorics are robust to sub-deflection coordinate noise. A triangle
    set whose area drifts more than 0.5% from the analytic face area raises
    TessellationError.
    """
    outer = face.outer if face.outer.is_circle() or face.outer.signed_area() > 0 \
        else face.outer.reversed()
    rings: list[np.ndarray] = []
    seg_meta: list[list[tuple[int, int]]] = []
    ring_r, seg_r = _loop_ring(outer, deflections, reverse=False)
    rings.append(ring_r)
    seg_meta.append(seg_r)
    for h in face.holes:
        hole = h if h.is_circle() or h.signed_area() < 0 else h.reversed()
        rev = hole.is_circle()  # circles discretize CCW; holes must run CW
        ring_h, seg_h = _loop_ring(hole, deflections, reverse=rev)
        rings.append(ring_h)
        seg_meta.append(seg_h)

    if not Polygon(rings[0], holes=rings[1:] or None).is_valid:
        raise TessellationError("face polygon invalid after discretization")

    coords = np.concatenate(rings, axis=0)
    ring_idx: list[list[int]] = []
    off = 0
    for ring in rings:
        ring_idx.append(list(range(off, off + len(ring))))
        off += len(ring)

    poly = ring_idx[0] if len(ring_idx) == 1 else _bridge_holes(
        coords, ring_idx[0], ring_idx[1:])
    tris = _ear_clip(coords, poly)

    analytic = _face_area(face)
    tri_arr = np.array(tris, dtype=np.int64)
    a = coords[tri_arr[:, 0]]
    b = coords[tri_arr[:, 1]]
    c = coords[tri_arr[:, 2]]
    tri_area = 0.5 * np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    ).sum()
    if analytic > 0 and abs(tri_area - analytic) > 0.005 * analytic:
        raise TessellationError(
            f"triangulated area {tri_area:.6g} vs analytic {analytic:.6g}")

    boundary: list[tuple[int, int, int, int, int]] = []
    for ri, (idxs, segs) in enumerate(zip(ring_idx, seg_meta)):
        n = len(idxs)
        for k in range(n):
            ci, prim = segs[k]
            boundary.append((idxs[k], idxs[(k + 1) % n], prim, ri, ci))
    return Tessellation2D(coords, tri_arr, boundary, analytic)


# --------------------------------------------------------------------------
# extrusion

def extrude_block(b: ExtrudeBlock, deflections: Deflections = Deflections()
                  ) -> TriMesh:
    """Closed prism mesh of one block: two caps plus side walls.

    Loops are re-expressed in the canonical in-plane frame and sorted
    canonically first, so any program with the same geometry meshes
    identically. face_id is unique per cap and per source curve's wall
    strip; face_primitive tags caps planar and walls by curve type.
    """
    loops = canonize.canonical_sketch_loops(b)
    ordered = [lp for lp, _ in canonize.sort_loops(loops)]
    faces = validate_sketch(ordered)

    from .cadprog import canonical_frame

    xs, ys = canonical_frame(b.plane.normal)
    n = np.asarray(b.plane.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    o = np.asarray(b.plane.origin, dtype=np.float64)

    verts: list[np.ndarray] = []
    tris: list[list[int]] = []
    prims: list[int] = []
    fids: list[int] = []
    next_fid = 0

    for face in faces:
        tess = tessellate_sketch(face, deflections)
        uv = tess.coords
        base = len(verts)
        bottom = o[None, :] + uv[:, :1] * xs[None, :] + uv[:, 1:2] * ys[None, :]
        top = bottom + b.depth * n[None, :]
        verts.extend(bottom)
        verts.extend(top)
        m = len(uv)

        cap_bottom_id = next_fid
        cap_top_id = next_fid + 1
        next_fid += 2
        for t in tess.triangles:
            i, j, k = (int(v) for v in t)
            # bottom cap faces -n: reverse the CCW in-plane winding
            tris.append([base + i, base + k, base + j])
            prims.append(int(Primitive.PLANAR_CAP))
            fids.append(cap_bottom_id)
            tris.append([base + m + i, base + m + j, base + m + k])
            prims.append(int(Primitive.PLANAR_CAP))
            fids.append(cap_top_id)

        wall_fid: dict[tuple[int, int], int] = {}
        for i, j, prim, ri, ck in tess.boundary:
            if (ri, ck) not in wall_fid:
                wall_fid[(ri, ck)] = next_fid
                next_fid += 1
            fid = wall_fid[(ri, ck)]
            i0, j0 = base + i, base + j
            i1, j1 = i0 + m, j0 + m
            # ring runs CCW seen from +n, so (i->j) x (+n) faces outward
            tris.append([i0, j0, j1])
            tris.append([i0, j1, i1])
            prims.extend([prim, prim])
            fids.extend([fid, fid])

    v = np.array(verts, dtype=np.float64)
    t = np.array(tris, dtype=np.int64)
    return TriMesh(v, t, np.array(prims, dtype=np.int64), np.array(fids, dtype=np.int64))


def mesh_volume(m: TriMesh) -> float:
    """Signed volume via the divergence theorem (outward orientation)."""
    a = m.vertices[m.triangles[:, 0]]
    b = m.vertices[m.triangles[:, 1]]
    c = m.vertices[m.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _hanging_edge_count(m: TriMesh) -> int:
    e = np.concatenate([
        m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]],
    ])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return int((counts != 2).sum())


def _require_closed(meshes: Iterable[TriMesh]) -> None:
    for i, m in enumerate(meshes):
        if len(m.triangles) == 0:
            raise OpenMeshError(f"block {i} mesh is empty")
        if _hanging_edge_count(m) != 0:
            raise OpenMeshError(f"block {i} mesh is not watertight")


# --------------------------------------------------------------------------
# membership

def _winding(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Generalized winding number of each point w.r.t. a closed mesh
    (sum of signed solid angles / 4pi)."""
    tv = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    chunk = max(16, min(len(points), int(4e6 / max(len(tv), 1))))
    out = np.zeros(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        a = tv[None, :, 0, :] - p[:, None, :]
        b = tv[None, :, 1, :] - p[:, None, :]
        c = tv[None, :, 2, :] - p[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        det = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("ptk,ptk->pt", a, b) * lc
            + np.einsum("ptk,ptk->pt", b, c) * la
            + np.einsum("ptk,ptk->pt", c, a) * lb
        )
        out[lo:lo + chunk] = np.arctan2(det, den).sum(axis=1) / (2.0 * math.pi)
    return out


def _mesh_bbox(m: TriMesh, pad: float) -> tuple[np.ndarray, np.ndarray]:
    return m.vertices.min(axis=0) - pad, m.vertices.max(axis=0) + pad


def _inside_mesh(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Strict inside test with bbox prefilter."""
    lo, hi = _mesh_bbox(mesh, 10.0 * EPS_SURF)
    mask = np.all((points >= lo) & (points <= hi), axis=1)
    out = np.zeros(len(points), dtype=bool)
    if mask.any():
        out[mask] = _winding(points[mask], mesh) > 0.5
    return out


def _composite_inside(points: np.ndarray,
                      blocks: Sequence[tuple[TriMesh, BooleanOp]]) -> np.ndarray:
    state = np.zeros(len(points), dtype=bool)
    for mesh, op in blocks:
        inside = _inside_mesh(points, mesh)
        if op is BooleanOp.CUT:
            state &= ~inside
        elif op is BooleanOp.JOIN:
            state |= inside
        else:
            state = inside
    return state


def compile_blocks(p: CadProgram, deflections: Deflections = Deflections()
                   ) -> list[tuple[TriMesh, BooleanOp]]:
    """Tessellate every block; the (mesh, op) list drives all CSG queries."""
    return [(extrude_block(b, deflections), b.op) for b in p.blocks]


def _points_tris_dist(pts: np.ndarray, tv: np.ndarray) -> np.ndarray:
    """Distance from each point (P, 3) to each triangle (T, 3, 3) -> (P, T)."""
    a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
    ab = (b - a)[None, :, :]
    ac = (c - a)[None, :, :]
    ap = pts[:, None, :] - a[None, :, :]
    bp = pts[:, None, :] - b[None, :, :]
    cp = pts[:, None, :] - c[None, :, :]
    d1 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ab, ap)[0], ap)
    d2 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ac, ap)[0], ap)
    d3 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ab, bp)[0], bp)
    d4 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ac, bp)[0], bp)
    d5 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ab, cp)[0], cp)
    d6 = np.einsum("ptk,ptk->pt", np.broadcast_arrays(ac, cp)[0], cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    safe = np.where(denom != 0, denom, 1.0)
    v = vb / safe
    w = vc / safe
    proj = a[None] + v[..., None] * ab + w[..., None] * ac

    proj = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a[None], proj)
    proj = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b[None], proj)
    proj = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c[None], proj)
    t_ab = np.clip(d1 / np.where(d1 - d3 != 0, d1 - d3, 1.0), 0, 1)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    proj = np.where(on_ab[..., None], a[None] + t_ab[..., None] * ab, proj)
    t_ac = np.clip(d2 / np.where(d2 - d6 != 0, d2 - d6, 1.0), 0, 1)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    proj = np.where(on_ac[..., None], a[None] + t_ac[..., None] * ac, proj)
    den_bc = (d4 - d3) + (d5 - d6)
    t_bc = np.clip((d4 - d3) / np.where(den_bc != 0, den_bc, 1.0), 0, 1)
    on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    proj = np.where(on_bc[..., None], b[None] + t_bc[..., None] * (c - b)[None], proj)

    return np.linalg.norm(proj - pts[:, None, :], axis=2)


def _nearest_on_mesh(points: np.ndarray, mesh: TriMesh
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Min distance to a mesh and the nearest triangle's unit normal."""
    tv = mesh.vertices[mesh.triangles]
    cr = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    ln = np.linalg.norm(cr, axis=1)
    tn = cr / np.where(ln > 0, ln, 1.0)[:, None]
    dist = np.empty(len(points))
    nrm = np.empty((len(points), 3))
    chunk = max(16, int(4e6 / max(len(tv), 1)))
    for lo in range(0, len(points), chunk):
        d = _points_tris_dist(points[lo:lo + chunk], tv)
        idx = np.argmin(d, axis=1)
        dist[lo:lo + chunk] = d[np.arange(len(d)), idx]
        nrm[lo:lo + chunk] = tn[idx]
    return dist, nrm


def point_membership(p: Sequence[float],
                     blocks_prefix: Sequence[tuple[TriMesh, BooleanOp]]
                     ) -> Membership:
    """Classify one point against the left-to-right CSG of (mesh, op) pairs.

    Points within eps_surf of the composite boundary report OnBoundary;
    the boundary test is two-sided (one probe Inside, the other Outside),
    so block faces swallowed by later booleans do not count.
    """
    if not blocks_prefix:
        raise EmptySolidError("no blocks to test against")
    _require_closed([m for m, _ in blocks_prefix])
    pt = np.asarray(p, dtype=np.float64)

    best = math.inf
    best_normal: np.ndarray | None = None
    for mesh, _ in blocks_prefix:
        lo, hi = _mesh_bbox(mesh, 2.0 * EPS_SURF)
        if np.any(pt < lo) or np.any(pt > hi):
            continue
        dist, nrm = _nearest_on_mesh(pt[None, :], mesh)
        if dist[0] < best:
            best = float(dist[0])
            best_normal = nrm[0]
    if best <= EPS_SURF and best_normal is not None:
        # two-sided evidence: material on one probe, void on another. The
        # nearest-face normal settles interior face points; the axis and
        # diagonal probes settle edge and corner points.
        dirs = [best_normal]
        for sx in (-1.0, 1.0):
            dirs.append(np.array([sx, 0.0, 0.0]))
            dirs.append(np.array([0.0, sx, 0.0]))
            dirs.append(np.array([0.0, 0.0, sx]))
        s3 = 1.0 / math.sqrt(3.0)
        for sx in (-s3, s3):
            for sy in (-s3, s3):
                for sz in (-s3, s3):
                    dirs.append(np.array([sx, sy, sz]))
        d = np.array(dirs)
        probes = np.concatenate([pt[None, :] + 2.0 * EPS_SURF * d,
                                 pt[None, :] - 2.0 * EPS_SURF * d])
        s = _composite_inside(probes, blocks_prefix)
        if s.any() and not s.all():
            return Membership.ON_BOUNDARY
    inside = _composite_inside(pt[None, :], blocks_prefix)[0]
    return Membership.INSIDE if inside else Membership.OUTSIDE


# --------------------------------------------------------------------------
# sampling

def sample_solid(p: CadProgram, n: int = DEFAULT_N_POINTS, seed: int = 0,
                 deflections: Deflections = Deflections()) -> SolidSample:
    """Uniform area-weighted sampling of the composite solid's boundary.

    Candidates are drawn on block surface triangles (area-weighted, with
    barycentric jitter) and kept iff they pass the two-sided membership
    probe; rejected candidates are redrawn until exactly n survive.
    """
    if n < 1:
        raise EmptySolidError("sample size must be >= 1")
    blocks = compile_blocks(p, deflections)
    _require_closed([m for m, _ in blocks])

    tv_all = []
    meta = []  # (block, prim, fid) per triangle
    for bi, (mesh, _) in enumerate(blocks):
        tv = mesh.vertices[mesh.triangles]
        tv_all.append(tv)
        meta.append(np.stack([
            np.full(len(tv), bi, dtype=np.int64),
            mesh.face_primitive,
            mesh.face_id,
        ], axis=1))
    tv = np.concatenate(tv_all)
    meta_arr = np.concatenate(meta)
    cross = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    normals = cross / np.linalg.norm(cross, axis=1)[:, None]
    cum = np.cumsum(areas)
    total = cum[-1]
    if total <= 0:
        raise EmptySolidError("empty solid")

    rng = np.random.default_rng(seed)
    got_pts: list[np.ndarray] = []
    got_nrm: list[np.ndarray] = []
    got_meta: list[np.ndarray] = []
    have = 0
    batches = 0
    max_candidates = max(300_000, 120 * n)
    drawn = 0
    while have < n:
        batch = max(4096, 2 * (n - have))
        drawn += batch
        batches += 1
        ti = np.searchsorted(cum, rng.random(batch) * total).clip(0, len(areas) - 1)
        r1 = np.sqrt(rng.random(batch))
        r2 = rng.random(batch)
        a, b, c = tv[ti, 0], tv[ti, 1], tv[ti, 2]
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        nrm = normals[ti]
        # probes sit eps off the candidate's own closed block surface, so
        # that block's membership is analytic; wind only the other blocks
        src = meta_arr[ti, 0]
        plus = np.empty(batch, dtype=bool)
        minus = np.empty(batch, dtype=bool)
        for bi in np.unique(src):
            m = src == bi
            plus[m] = _composite_inside_sub(
                pts[m] + EPS_SURF * nrm[m], blocks, bi, False)
            minus[m] = _composite_inside_sub(
                pts[m] - EPS_SURF * nrm[m], blocks, bi, True)
        keep = plus != minus
        if keep.any():
            kpts = pts[keep]
            knrm = np.where(plus[keep][:, None], -nrm[keep], nrm[keep])
            got_pts.append(kpts)
            got_nrm.append(knrm)
            got_meta.append(meta_arr[ti[keep]])
            have += len(kpts)
        if have == 0 and batches >= 10:
            raise EmptySolidError("empty solid")
        if have < n and drawn >= max_candidates:
            raise EmptySolidError("empty solid")

    pts = np.concatenate(got_pts)[:n]
    nrm = np.concatenate(got_nrm)[:n]
    mt = np.concatenate(got_meta)[:n]
    return SolidSample(pts, nrm, mt[:, 1].copy(), mt[:, 0].copy(), mt[:, 2].copy())


def decompose_sample(s: SolidSample) -> list[np.ndarray]:
    """Split a sample into per-primitive-face point sets (connected faces),
    ordered by (source_block, face_id)."""
    key = np.stack([s.source_block, s.face_id], axis=1)
    uniq = np.unique(key, axis=0)
    out = []
    for bk, fid in uniq:
        m = (s.source_block == bk) & (s.face_id == fid)
        out.append(s.points[m])
    return out


# --------------------------------------------------------------------------
# composite mesh extraction

def _composite_inside_sub(points: np.ndarray,
                          blocks: Sequence[tuple[TriMesh, BooleanOp]],
                          self_idx: int, self_inside: bool) -> np.ndarray:
    """Composite membership where block self_idx's own inside test is
    replaced by a constant.

    Probe points sit eps_surf off block self_idx's own closed surface, so
    their membership in that block is known analytically (outward probe
    outside, inward probe inside); only the other blocks need winding sums.
    """
    state = np.zeros(len(points), dtype=bool)
    for j, (mesh, op) in enumerate(blocks):
        if j == self_idx:
            inside = np.full(len(points), self_inside)
        else:
            inside = _inside_mesh(points, mesh)
        if op is BooleanOp.CUT:
            state &= ~inside
        elif op is BooleanOp.JOIN:
            state |= inside
        else:
            state = inside
    return state


def _split4(tv: np.ndarray, prim: np.ndarray, fid: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """4:1 midpoint split of a triangle soup (W, 3, 3)."""
    a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
    ab = 0.5 * (a + b)
    bc = 0.5 * (b + c)
    ca = 0.5 * (c + a)
    children = np.concatenate([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ])
    return children, np.tile(prim, 4), np.tile(fid, 4)


def extract_mesh(p: CadProgram, deflections: Deflections = Deflections(),
                 refine_factor: float = 0.05) -> TriMesh:
    """Boundary mesh of the composed solid.

    Single-block programs return the block's prism mesh unchanged. With
    booleans, each block's triangles are adaptively refined: a triangle
    whose two-sided membership probes agree at its centroid and edge
    midpoints is kept or dropped whole (flipped when its outward side
    faces composite interior); disagreeing triangles split 4:1 down to
    refine_factor/16 of the model extent, so refinement concentrates at
    boolean seam curves. Seams stay unstitched; features smaller than
    refine_factor * extent may be missed.
    """
    blocks = compile_blocks(p, deflections)
    _require_closed([m for m, _ in blocks])
    if len(blocks) == 1:
        return blocks[0][0]

    los = np.min([m.vertices.min(axis=0) for m, _ in blocks], axis=0)
    his = np.max([m.vertices.max(axis=0) for m, _ in blocks], axis=0)
    extent = max(float((his - los).max()), 1e-9)
    h0 = refine_factor * extent
    hmin = h0 / 16.0

    kept_tv: list[np.ndarray] = []
    kept_p: list[np.ndarray] = []
    kept_f: list[np.ndarray] = []
    for bi, (mesh, _) in enumerate(blocks):
        tv = mesh.vertices[mesh.triangles]
        prim = mesh.face_primitive
        fid = mesh.face_id
        while len(tv):
            a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
            longest = np.maximum(
                np.linalg.norm(a - b, axis=1),
                np.maximum(np.linalg.norm(b - c, axis=1),
                           np.linalg.norm(c - a, axis=1)),
            )
            coarse = longest > h0
            fine_idx = np.flatnonzero(~coarse)
            split_mask = coarse.copy()
            if len(fine_idx):
                ftv = tv[fine_idx]
                cr = np.cross(ftv[:, 1] - ftv[:, 0], ftv[:, 2] - ftv[:, 0])
                ln = np.linalg.norm(cr, axis=1)
                nrm = cr / np.where(ln > 0, ln, 1.0)[:, None]
                samples = np.stack([
                    ftv.mean(axis=1),
                    0.5 * (ftv[:, 0] + ftv[:, 1]),
                    0.5 * (ftv[:, 1] + ftv[:, 2]),
                    0.5 * (ftv[:, 2] + ftv[:, 0]),
                ], axis=1)  # (F, 4, 3)
                off = EPS_SURF * nrm[:, None, :]
                flat_plus = (samples + off).reshape(-1, 3)
                flat_minus = (samples - off).reshape(-1, 3)
                sp = _composite_inside_sub(flat_plus, blocks, bi, False).reshape(-1, 4)
                sm = _composite_inside_sub(flat_minus, blocks, bi, True).reshape(-1, 4)
                keep = sp != sm
                flip = sp
                # coincident-surface ownership: where an earlier block's
                # surface passes through the same patch with an aligned
                # normal, that block already kept it; drop the duplicate
                flat_samples = samples.reshape(-1, 3)
                flat_n = np.broadcast_to(nrm[:, None, :], samples.shape).reshape(-1, 3)
                claimed = np.zeros(len(flat_samples), dtype=bool)
                for j in range(bi):
                    mesh_j = blocks[j][0]
                    lo_j, hi_j = _mesh_bbox(mesh_j, 2.0 * EPS_SURF)
                    near = np.all((flat_samples >= lo_j) & (flat_samples <= hi_j),
                                  axis=1) & ~claimed
                    if not near.any():
                        continue
                    dj, nj = _nearest_on_mesh(flat_samples[near], mesh_j)
                    coincide = (dj <= EPS_SURF) & (
                        np.einsum("ij,ij->i", nj, flat_n[near]) > 0.5)
                    claimed[np.flatnonzero(near)[coincide]] = True
                keep &= ~claimed.reshape(-1, 4)
                keep_uniform = keep.all(axis=1) | ~keep.any(axis=1)
                flip_uniform = (flip == flip[:, :1]).all(axis=1) | ~keep.any(axis=1)
                uniform = keep_uniform & flip_uniform
                tiny = longest[fine_idx] <= hmin
                settle = uniform | tiny | (ln == 0)
                dec_keep = keep[:, 0] & settle & (ln > 0)
                if dec_keep.any():
                    sel = fine_idx[dec_keep]
                    out_tv = tv[sel].copy()
                    fl = flip[:, 0][dec_keep]
                    out_tv[fl] = out_tv[fl][:, [0, 2, 1]]
                    kept_tv.append(out_tv)
                    kept_p.append(prim[sel])
                    kept_f.append(fid[sel])
                split_mask[fine_idx[~settle]] = True
            sel = np.flatnonzero(split_mask)
            if not len(sel):
                break
            tv, prim, fid = _split4(tv[sel], prim[sel], fid[sel])

    if not kept_tv:
        raise EmptySolidError("empty solid")
    tv = np.concatenate(kept_tv)
    prim = np.concatenate(kept_p)
    fid = np.concatenate(kept_f)
    flat = tv.reshape(-1, 3)
    uniq, inv = np.unique(flat.view([("", flat.dtype)] * 3), return_inverse=True)
    v = uniq.view(flat.dtype).reshape(-1, 3)
    t = inv.reshape(-1, 3).astype(np.int64)
    return TriMesh(v, t, prim, fid)


# --------------------------------------------------------------------------
# export

class ExportKind(Enum):
    OBJ = "obj"
    STEP_SKELETON = "step"
    HISTORY_JSON = "json"


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _obj_text(mesh: TriMesh) -> str:
    lines = ["# cadseq mesh export"]
    for vx, vy, vz in mesh.vertices:
        lines.append(f"v {_fmt(vx)} {_fmt(vy)} {_fmt(vz)}")
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    return "\n".join(lines) + "\n"


def _step_entities(p: CadProgram) -> str:
    out = []
    eid = 1

    def nxt() -> int:
        nonlocal eid
        eid += 1
        return eid - 1

    for bi, b in enumerate(p.blocks):
        out.append(f"/* block {bi}: op={b.op.value} depth={_fmt(b.depth)} */")
        o = nxt()
        out.append(f"#{o}=CARTESIAN_POINT('block{bi}_origin',({_fmt(b.plane.origin[0])},{_fmt(b.plane.origin[1])},{_fmt(b.plane.origin[2])}));")
        dn = nxt()
        out.append(f"#{dn}=DIRECTION('block{bi}_normal',({_fmt(b.plane.normal[0])},{_fmt(b.plane.normal[1])},{_fmt(b.plane.normal[2])}));")
        dx = nxt()
        out.append(f"#{dx}=DIRECTION('block{bi}_xaxis',({_fmt(b.plane.x_axis[0])},{_fmt(b.plane.x_axis[1])},{_fmt(b.plane.x_axis[2])}));")
        ax = nxt()
        out.append(f"#{ax}=AXIS2_PLACEMENT_3D('block{bi}_frame',#{o},#{dn},#{dx});")
        for li, lp in enumerate(b.loops):
            for ci, c in enumerate(lp.curves):
                tag = f"b{bi}l{li}c{ci}"
                if isinstance(c, Line):
                    s = nxt()
                    out.append(f"#{s}=CARTESIAN_POINT('{tag}_s',({_fmt(c.start[0])},{_fmt(c.start[1])}));")
                    e = nxt()
                    out.append(f"#{e}=CARTESIAN_POINT('{tag}_e',({_fmt(c.end[0])},{_fmt(c.end[1])}));")
                    pl = nxt()
                    out.append(f"#{pl}=POLYLINE('{tag}',(#{s},#{e}));")
                elif isinstance(c, Arc):
                    center, r, _, _ = arc_params(c)
                    cp = nxt()
                    out.append(f"#{cp}=CARTESIAN_POINT('{tag}_c',({_fmt(center[0])},{_fmt(center[1])}));")
                    pl = nxt()
                    out.append(f"#{pl}=AXIS2_PLACEMENT_2D('{tag}_p',#{cp},$);")
                    ci_id = nxt()
                    out.append(f"#{ci_id}=CIRCLE('{tag}',#{pl},{_fmt(r)});")
                    s = nxt()
                    out.append(f"#{s}=CARTESIAN_POINT('{tag}_s',({_fmt(c.start[0])},{_fmt(c.start[1])}));")
                    e = nxt()
                    out.append(f"#{e}=CARTESIAN_POINT('{tag}_e',({_fmt(c.end[0])},{_fmt(c.end[1])}));")
                    tc = nxt()
                    out.append(f"#{tc}=TRIMMED_CURVE('{tag}_t',#{ci_id},(#{s}),(#{e}),.T.,.CARTESIAN.);")
                else:
                    cp = nxt()
                    out.append(f"#{cp}=CARTESIAN_POINT('{tag}_c',({_fmt(c.center[0])},{_fmt(c.center[1])}));")
                    pl = nxt()
                    out.append(f"#{pl}=AXIS2_PLACEMENT_2D('{tag}_p',#{cp},$);")
                    ci_id = nxt()
                    out.append(f"#{ci_id}=CIRCLE('{tag}',#{pl},{_fmt(c.radius)});")
    return "\n".join(out)


def _step_text(p: CadProgram) -> str:
    return (
        "ISO-10303-21;\n"
        "HEADER;\n"
        "FILE_DESCRIPTION(('cadseq sketch-extrude skeleton'),'2;1');\n"
        "FILE_NAME('cadseq_export','',(''),(''),'cadseq','cadseq','');\n"
        "FILE_SCHEMA(('AUTOMOTIVE_DESIGN { 1 0 10303 214 1 1 1 1 }'));\n"
        "ENDSEC;\n"
        "DATA;\n"
        f"{_step_entities(p)}\n"
        "ENDSEC;\n"
        "END-ISO-10303-21;\n"
    )


def export(p: CadProgram, kind: ExportKind, path: str | Path,
           deflections: Deflections = Deflections()) -> None:
    """Write a program as OBJ (compiled mesh), STEP skeleton, or history JSON."""
    if kind is ExportKind.OBJ:
        text = _obj_text(extract_mesh(p, deflections))
    elif kind is ExportKind.STEP_SKELETON:
        text = _step_text(p)
    else:
        text = serialize_program(p) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
