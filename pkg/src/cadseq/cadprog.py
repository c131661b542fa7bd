"""Sketch-extrude program data model and JSON interchange.

A program is an ordered list of extrude blocks. Each block owns a sketch
plane, one or more closed loops drawn in that plane's (u, v) coordinates,
an extrusion depth along the plane normal, and a boolean op that folds the
extruded prism into the running solid (New / Join / Cut).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence, Union

from .errors import EmptySolidError, GeometryError, SchemaError

# Endpoint tolerance for loop chaining.
EPS_JOIN = 1e-6

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


class BooleanOp(Enum):
    NEW = "new"
    JOIN = "join"
    CUT = "cut"


# --------------------------------------------------------------------------
# curves

@dataclass(frozen=True)
class Line:
    start: Vec2
    end: Vec2


@dataclass(frozen=True)
class Arc:
    """Circular arc through three points, traversed start -> mid -> end."""

    start: Vec2
    mid: Vec2
    end: Vec2


@dataclass(frozen=True)
class Circle:
    center: Vec2
    radius: float


Curve = Union[Line, Arc, Circle]


def curve_start(c: Curve) -> Vec2:
    if isinstance(c, Circle):
        return (c.center[0] + c.radius, c.center[1])
    return c.start


def curve_end(c: Curve) -> Vec2:
    if isinstance(c, Circle):
        return (c.center[0] + c.radius, c.center[1])
    return c.end


def reverse_curve(c: Curve) -> Curve:
    if isinstance(c, Line):
        return Line(c.end, c.start)
    if isinstance(c, Arc):
        return Arc(c.end, c.mid, c.start)
    return c


def arc_params(a: Arc) -> tuple[Vec2, float, float, float]:
    """Return (center, radius, sweep, start_angle) of a three-point arc.

    sweep is signed: positive when the arc turns left (CCW). Raises
    GeometryError when the three points are (nearly) collinear.
    """
    ax, ay = a.start
    bx, by = a.mid
    cx, cy = a.end
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    chord = math.hypot(cx - ax, cy - ay)
    span = max(chord, math.hypot(bx - ax, by - ay), math.hypot(cx - bx, cy - by))
    if abs(d) <= 1e-12 * span * span:
        raise GeometryError("collinear arc")
    sa = ax * ax + ay * ay
    sb = bx * bx + by * by
    sc = cx * cx + cy * cy
    ux = (sa * (by - cy) + sb * (cy - ay) + sc * (ay - by)) / d
    uy = (sa * (cx - bx) + sb * (ax - cx) + sc * (bx - ax)) / d
    r = math.hypot(ax - ux, ay - uy)
    ccw = (bx - ax) * (cy - by) - (by - ay) * (cx - bx) > 0.0
    a0 = math.atan2(ay - uy, ax - ux)
    a2 = math.atan2(cy - uy, cx - ux)
    if ccw:
        sweep = (a2 - a0) % math.tau
        if sweep == 0.0:
            sweep = math.tau
    else:
        sweep = -((a0 - a2) % math.tau)
        if sweep == 0.0:
            sweep = -math.tau
    return (ux, uy), r, sweep, a0


def arc_point(center: Vec2, radius: float, angle: float) -> Vec2:
    return (center[0] + radius * math.cos(angle), center[1] + radius * math.sin(angle))


def curve_length(c: Curve) -> float:
    if isinstance(c, Line):
        return math.hypot(c.end[0] - c.start[0], c.end[1] - c.start[1])
    if isinstance(c, Arc):
        _, r, sweep, _ = arc_params(c)
        return r * abs(sweep)
    return math.tau * c.radius


# --------------------------------------------------------------------------
# loops

@dataclass(frozen=True)
class Loop:
    """Closed chain of curves. Outer loops run CCW, holes CW; a Circle is
    always the only curve of its loop and carries no orientation."""

    curves: tuple[Curve, ...]

    def is_circle(self) -> bool:
        return len(self.curves) == 1 and isinstance(self.curves[0], Circle)

    def is_closed(self, eps: float = EPS_JOIN) -> bool:
        if self.is_circle():
            return True
        for cur, nxt in zip(self.curves, self.curves[1:] + self.curves[:1]):
            e, s = curve_end(cur), curve_start(nxt)
            if math.hypot(e[0] - s[0], e[1] - s[1]) > eps:
                return False
        return True

    def signed_area(self) -> float:
        """Exact signed area: shoelace over chord endpoints plus circular
        segment corrections. A lone Circle is positive by convention."""
        if self.is_circle():
            c = self.curves[0]
            assert isinstance(c, Circle)
            return math.pi * c.radius * c.radius
        total = 0.0
        for cur in self.curves:
            sx, sy = curve_start(cur)
            ex, ey = curve_end(cur)
            total += 0.5 * (sx * ey - sy * ex)
            if isinstance(cur, Arc):
                _, r, sweep, _ = arc_params(cur)
                total += 0.5 * r * r * (sweep - math.sin(sweep))
        return total

    def reversed(self) -> "Loop":
        return Loop(tuple(reverse_curve(c) for c in reversed(self.curves)))


def loop_polyline(loop: Loop, segments_per_arc: int = 32) -> list[Vec2]:
    """Coarse closed polyline of a loop, for classification only."""
    pts: list[Vec2] = []
    for cur in loop.curves:
        if isinstance(cur, Line):
            pts.append(cur.start)
        elif isinstance(cur, Arc):
            center, r, sweep, a0 = arc_params(cur)
            for i in range(segments_per_arc):
                pts.append(arc_point(center, r, a0 + sweep * i / segments_per_arc))
        else:
            n = 2 * segments_per_arc
            for i in range(n):
                pts.append(arc_point(cur.center, cur.radius, math.tau * i / n))
    return pts


def point_in_polyline(pt: Vec2, poly: Sequence[Vec2]) -> bool:
    """Even-odd ray cast of pt against a closed polyline."""
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


# --------------------------------------------------------------------------
# planes and blocks

def _normalize3(v: Sequence[float]) -> Vec3:
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n == 0.0:
        raise GeometryError("zero-length direction vector")
    if n == 1.0:
        return (float(v[0]), float(v[1]), float(v[2]))
    return (v[0] / n, v[1] / n, v[2] / n)


def _cross3(a: Sequence[float], b: Sequence[float]) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _dot3(a: Sequence[float], b: Sequence[float]) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def canonical_frame(normal: Sequence[float]) -> tuple[Vec3, Vec3]:
    """Deterministic in-plane frame for a unit normal.

    x_axis = normalize(cross(+Z, n)), except (1, 0, 0) when n is within
    1e-9 of +/-Z. y_axis completes the right-handed frame.
    """
    n = _normalize3(normal)
    if abs(n[2]) > 1.0 - 1e-9:
        x = (1.0, 0.0, 0.0)
    else:
        x = _normalize3(_cross3((0.0, 0.0, 1.0), n))
    y = _cross3(n, x)
    return x, y


@dataclass(frozen=True)
class SketchPlane:
    normal: Vec3
    origin: Vec3
    x_axis: Vec3

    @property
    def y_axis(self) -> Vec3:
        return _cross3(self.normal, self.x_axis)

    def to_world(self, u: float, v: float, w: float = 0.0) -> Vec3:
        x, y, n, o = self.x_axis, self.y_axis, self.normal, self.origin
        return (
            o[0] + u * x[0] + v * y[0] + w * n[0],
            o[1] + u * x[1] + v * y[1] + w * n[1],
            o[2] + u * x[2] + v * y[2] + w * n[2],
        )


def make_plane(normal: Sequence[float], origin: Sequence[float],
               x_axis: Sequence[float] | None = None) -> SketchPlane:
    """Build a plane with a unit normal and an in-plane orthonormal x_axis.

    x_axis defaults to the canonical frame; a supplied x_axis is
    Gram-Schmidt projected into the plane and must not be parallel to the
    normal.
    """
    n = _normalize3(normal)
    if x_axis is None:
        x, _ = canonical_frame(n)
    else:
        d = _dot3(x_axis, n)
        proj = (x_axis[0] - d * n[0], x_axis[1] - d * n[1], x_axis[2] - d * n[2])
        if math.sqrt(_dot3(proj, proj)) < 1e-9:
            raise GeometryError("x_axis parallel to plane normal")
        x = _normalize3(proj)
    return SketchPlane(n, (float(origin[0]), float(origin[1]), float(origin[2])), x)


@dataclass(frozen=True)
class ExtrudeBlock:
    plane: SketchPlane
    loops: tuple[Loop, ...]
    depth: float
    op: BooleanOp


@dataclass(frozen=True)
class BboxScale:
    """Normalization record: normalized = (original - center) * scale."""

    center: Vec3 = (0.0, 0.0, 0.0)
    scale: float = 1.0


@dataclass(frozen=True)
class CadProgram:
    blocks: tuple[ExtrudeBlock, ...]
    bbox_scale: BboxScale = field(default_factory=BboxScale)


# --------------------------------------------------------------------------
# parsing

def _err(path: str, msg: str) -> SchemaError:
    return SchemaError(f"{path}: {msg}")


def _req(obj: Any, key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise _err(path, "expected object")
    if key not in obj:
        raise _err(f"{path}.{key}", "missing field")
    return obj[key]


def _num(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err(path, f"expected number, got {type(v).__name__}")
    f = float(v)
    if not math.isfinite(f):
        raise _err(path, "number must be finite")
    return f


def _vec(v: Any, n: int, path: str) -> tuple[float, ...]:
    if not isinstance(v, list) or len(v) != n:
        raise _err(path, f"expected array of {n} numbers")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


def _split_wide_arc(a: Arc) -> list[Arc]:
    """Split arcs sweeping more than pi into two halves.

    The token codec's chord/turn relation only covers |sweep| <= pi, so
    wider arcs are rewritten into an exactly equivalent pair at parse time.
    """
    center, r, sweep, a0 = arc_params(a)
    if abs(sweep) <= math.pi:
        return [a]
    half = arc_point(center, r, a0 + 0.5 * sweep)
    q1 = arc_point(center, r, a0 + 0.25 * sweep)
    q3 = arc_point(center, r, a0 + 0.75 * sweep)
    return [Arc(a.start, q1, half), Arc(half, q3, a.end)]


def _parse_curve(obj: Any, path: str) -> list[Curve]:
    kind = _req(obj, "type", path)
    if kind == "line":
        start = _vec(_req(obj, "start", path), 2, f"{path}.start")
        end = _vec(_req(obj, "end", path), 2, f"{path}.end")
        if math.hypot(end[0] - start[0], end[1] - start[1]) <= EPS_JOIN:
            raise GeometryError(f"zero-length line at {path}")
        return [Line(start, end)]
    if kind == "arc":
        start = _vec(_req(obj, "start", path), 2, f"{path}.start")
        mid = _vec(_req(obj, "mid", path), 2, f"{path}.mid")
        end = _vec(_req(obj, "end", path), 2, f"{path}.end")
        if math.hypot(end[0] - start[0], end[1] - start[1]) <= EPS_JOIN:
            raise GeometryError(f"degenerate arc (coincident endpoints) at {path}")
        arc = Arc(start, mid, end)
        arc_params(arc)  # collinear mid -> GeometryError
        return list(_split_wide_arc(arc))
    if kind == "circle":
        center = _vec(_req(obj, "center", path), 2, f"{path}.center")
        radius = _num(_req(obj, "radius", path), f"{path}.radius")
        if radius <= 0.0:
            raise GeometryError(f"zero radius at {path}")
        return [Circle(center, radius)]
    raise _err(f"{path}.type", f"unknown curve type {kind!r}")


def _parse_loop(obj: Any, path: str) -> Loop:
    raw = _req(obj, "curves", path)
    if not isinstance(raw, list) or not raw:
        raise _err(f"{path}.curves", "expected non-empty array")
    curves: list[Curve] = []
    for i, c in enumerate(raw):
        curves.extend(_parse_curve(c, f"{path}.curves[{i}]"))
    has_circle = any(isinstance(c, Circle) for c in curves)
    if has_circle and len(curves) > 1:
        raise GeometryError(f"circle must be the only curve of its loop at {path}")
    loop = Loop(tuple(curves))
    if not loop.is_closed():
        raise GeometryError(f"open loop at {path}")
    return loop


def _orient_loops(loops: list[Loop]) -> list[Loop]:
    """Force outer loops CCW and holes CW, classified by containment parity."""
    polys = [loop_polyline(lp) for lp in loops]
    out: list[Loop] = []
    for i, lp in enumerate(loops):
        depth = sum(
            1 for j in range(len(loops))
            if j != i and point_in_polyline(polys[i][0], polys[j])
        )
        if lp.is_circle():
            out.append(lp)
            continue
        area = lp.signed_area()
        want_ccw = depth % 2 == 0
        if (area > 0.0) != want_ccw:
            lp = lp.reversed()
        out.append(lp)
    return out


def _parse_block(obj: Any, idx: int, path: str) -> ExtrudeBlock:
    pobj = _req(obj, "plane", path)
    normal = _vec(_req(pobj, "normal", f"{path}.plane"), 3, f"{path}.plane.normal")
    origin = _vec(_req(pobj, "origin", f"{path}.plane"), 3, f"{path}.plane.origin")
    x_axis = _vec(_req(pobj, "x_axis", f"{path}.plane"), 3, f"{path}.plane.x_axis")
    try:
        plane = make_plane(normal, origin, x_axis)
    except GeometryError as e:
        raise _err(f"{path}.plane", str(e)) from e

    raw_loops = _req(obj, "loops", path)
    if not isinstance(raw_loops, list) or not raw_loops:
        raise _err(f"{path}.loops", "expected non-empty array")
    loops = [_parse_loop(lp, f"{path}.loops[{i}]") for i, lp in enumerate(raw_loops)]
    loops = _orient_loops(loops)

    depth = _num(_req(obj, "depth", path), f"{path}.depth")
    if depth <= 0.0:
        raise _err(f"{path}.depth", "extrusion depth must be > 0")

    op_raw = _req(obj, "op", path)
    try:
        op = BooleanOp(op_raw)
    except ValueError:
        raise _err(f"{path}.op", f"unknown op {op_raw!r}") from None
    if idx == 0 and op is not BooleanOp.NEW:
        raise _err(f"{path}.op", "first block op must be 'new'")
    return ExtrudeBlock(plane, tuple(loops), depth, op)


def parse_program(text: str) -> CadProgram:
    """Parse the JSON interchange form into a validated CadProgram.

    Raises SchemaError for structural problems (with a JSON path) and
    GeometryError for degenerate curves or open loops. Loops are
    re-oriented (outer CCW, holes CW) and arcs sweeping more than pi are
    split, so parsing is a canonicalizing step.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise _err("$", f"invalid JSON: {e.msg}") from e
    raw_blocks = _req(doc, "blocks", "$")
    if not isinstance(raw_blocks, list) or not raw_blocks:
        raise _err("$.blocks", "expected non-empty array")
    blocks = tuple(
        _parse_block(b, i, f"$.blocks[{i}]") for i, b in enumerate(raw_blocks)
    )
    bbox = BboxScale()
    if isinstance(doc, dict) and "bbox_scale" in doc:
        bobj = doc["bbox_scale"]
        center = _vec(_req(bobj, "center", "$.bbox_scale"), 3, "$.bbox_scale.center")
        scale = _num(_req(bobj, "scale", "$.bbox_scale"), "$.bbox_scale.scale")
        if scale <= 0.0:
            raise _err("$.bbox_scale.scale", "scale must be > 0")
        bbox = BboxScale(center, scale)
    return CadProgram(blocks, bbox)


# --------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> float:
    # 12 significant digits; repr of the reparsed float never exceeds them
    if x == 0.0:
        return 0.0
    return float(f"{x:.12g}")


def _vec_out(v: Iterable[float]) -> list[float]:
    return [_fmt(x) for x in v]


def _curve_out(c: Curve) -> dict[str, Any]:
    if isinstance(c, Line):
        return {"type": "line", "start": _vec_out(c.start), "end": _vec_out(c.end)}
    if isinstance(c, Arc):
        return {
            "type": "arc",
            "start": _vec_out(c.start),
            "mid": _vec_out(c.mid),
            "end": _vec_out(c.end),
        }
    return {"type": "circle", "center": _vec_out(c.center), "radius": _fmt(c.radius)}


def serialize_program(p: CadProgram) -> str:
    """Serialize to the JSON interchange form.

    Deterministic: key order is fixed and numbers are emitted with 12
    significant digits, so equal programs produce byte-equal text.
    """
    doc: dict[str, Any] = {
        "blocks": [
            {
                "plane": {
                    "normal": _vec_out(b.plane.normal),
                    "origin": _vec_out(b.plane.origin),
                    "x_axis": _vec_out(b.plane.x_axis),
                },
                "loops": [
                    {"curves": [_curve_out(c) for c in lp.curves]} for lp in b.loops
                ],
                "depth": _fmt(b.depth),
                "op": b.op.value,
            }
            for b in p.blocks
        ]
    }
    bs = p.bbox_scale
    if bs.scale != 1.0 or bs.center != (0.0, 0.0, 0.0):
        doc["bbox_scale"] = {"center": _vec_out(bs.center), "scale": _fmt(bs.scale)}
    return json.dumps(doc, indent=2)


# --------------------------------------------------------------------------
# normalization

def _scale_curve(c: Curve, k: float) -> Curve:
    if isinstance(c, Line):
        return Line((c.start[0] * k, c.start[1] * k), (c.end[0] * k, c.end[1] * k))
    if isinstance(c, Arc):
        return Arc(
            (c.start[0] * k, c.start[1] * k),
            (c.mid[0] * k, c.mid[1] * k),
            (c.end[0] * k, c.end[1] * k),
        )
    return Circle((c.center[0] * k, c.center[1] * k), c.radius * k)


def normalize_program(p: CadProgram) -> CadProgram:
    """Rescale the program into [-1, 1]^3 about its solid's bbox center.

    The bbox comes from the compiled composite mesh, so the program must
    compile to a non-empty solid. The bbox_scale record composes across
    repeated calls and always maps back to the original coordinates;
    an already-normalized program is returned unchanged.
    """
    from .geomkernel import extract_mesh  # deferred: geomkernel imports us

    mesh = extract_mesh(p)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise EmptySolidError("degenerate solid: zero bbox extent")
    c = (lo + hi) / 2.0
    k = 2.0 / extent
    if abs(k - 1.0) <= 1e-9 and float(abs(c).max()) <= 1e-9:
        return p

    blocks = []
    for b in p.blocks:
        o = b.plane.origin
        origin = ((o[0] - c[0]) * k, (o[1] - c[1]) * k, (o[2] - c[2]) * k)
        plane = SketchPlane(b.plane.normal, origin, b.plane.x_axis)
        loops = tuple(
            Loop(tuple(_scale_curve(cv, k) for cv in lp.curves)) for lp in b.loops
        )
        blocks.append(ExtrudeBlock(plane, loops, b.depth * k, b.op))

    old = p.bbox_scale
    center = (
        old.center[0] + c[0] / old.scale,
        old.center[1] + c[1] / old.scale,
        old.center[2] + c[2] / old.scale,
    )
    return CadProgram(tuple(blocks), BboxScale(center, old.scale * k))
