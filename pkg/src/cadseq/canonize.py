"""Hierarchical canonical token form for sketch-extrude programs.

Three aligned streams describe a program:

* EB: one token per extrude block (plane, depth, boolean op), program order.
* SP: one spatial anchor per loop (sorting score, start point, entry
  tangent, bbox extent), sorted canonically within each block.
* CC: per-loop runs of relative curve tokens (turn-then-move chords with
  signed curvature and residual offsets), each run EOS-terminated.

The CC stream is translation invariant by construction: every numeric
field derives from coordinate differences only, never absolute positions.
Loop order and curve start are canonicalized so any permutation of the
same sketch encodes to the same streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, NamedTuple, Sequence

import numpy as np

from .cadprog import (
    Arc,
    BooleanOp,
    CadProgram,
    Circle,
    Curve,
    ExtrudeBlock,
    Line,
    Loop,
    SketchPlane,
    Vec2,
    Vec3,
    arc_params,
    canonical_frame,
    curve_start,
    make_plane,
)
from .errors import (
    GeometryError,
    InconsistentStreamsError,
    MalformedTokenError,
    OpenLoopError,
    SchemaError,
)

EB_DIM = 10
SP_DIM = 6
CC_DIM = 8

# Sorting defaults; alpha must dominate beta so position only tie-breaks.
DEFAULT_SORT_ALPHA = 10.0
DEFAULT_SORT_BETA = 0.01

_HALF_PI = math.pi / 2.0

_OPS = (BooleanOp.NEW, BooleanOp.JOIN, BooleanOp.CUT)


class CurveType(IntEnum):
    LINE = 0
    ARC = 1  # covers circles (l = 0 sentinel)
    EOS = 2


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


# --------------------------------------------------------------------------
# tokens

@dataclass(frozen=True)
class EbToken:
    n_sketch: Vec3
    p_origin: Vec3
    h_ext: float
    b_type: BooleanOp

    def raw(self) -> list[float]:
        one_hot = [1.0 if self.b_type is op else 0.0 for op in _OPS]
        return [*self.n_sketch, *self.p_origin, self.h_ext, *one_hot]


@dataclass(frozen=True)
class SpAnchor:
    score: float
    p_start: Vec2
    theta_start: float
    loop_bbox: tuple[float, float, float, float]  # (x_m, y_m, w_m, h_m)

    def raw(self) -> list[float]:
        return [
            self.score,
            self.p_start[0],
            self.p_start[1],
            self.theta_start,
            self.loop_bbox[2],
            self.loop_bbox[3],
        ]


@dataclass(frozen=True)
class CcToken:
    l: float
    dtheta: float
    kappa: float
    dx: float
    dy: float
    t: CurveType

    def raw(self) -> list[float]:
        one_hot = [1.0 if self.t == k else 0.0 for k in CurveType]
        return [self.l, self.dtheta, self.kappa, self.dx, self.dy, *one_hot]


EOS_TOKEN = CcToken(0.0, 0.0, 0.0, 0.0, 0.0, CurveType.EOS)


@dataclass(frozen=True)
class HierTokens:
    eb: tuple[EbToken, ...]
    sp: tuple[SpAnchor, ...]
    cc: tuple[CcToken, ...]
    sp_block: tuple[int, ...]  # SP index -> block index
    cc_sp: tuple[int, ...]  # CC index -> SP index

    def eb_features(self) -> np.ndarray:
        return np.array([t.raw() for t in self.eb], dtype=np.float64).reshape(-1, EB_DIM)

    def sp_features(self) -> np.ndarray:
        return np.array([t.raw() for t in self.sp], dtype=np.float64).reshape(-1, SP_DIM)

    def cc_features(self) -> np.ndarray:
        return np.array([t.raw() for t in self.cc], dtype=np.float64).reshape(-1, CC_DIM)

    def cc_runs(self) -> list[tuple[CcToken, ...]]:
        """Split the CC stream into per-SP runs using the alignment table."""
        runs: list[list[CcToken]] = [[] for _ in self.sp]
        for tok, si in zip(self.cc, self.cc_sp):
            if not 0 <= si < len(self.sp):
                raise InconsistentStreamsError(f"cc_sp index {si} out of range")
            runs[si].append(tok)
        return [tuple(r) for r in runs]


# --------------------------------------------------------------------------
# loop helpers

def loop_bbox(loop: Loop) -> tuple[float, float, float, float]:
    """Exact axis-aligned bbox (x_min, y_min, w, h) including arc extrema."""
    xs: list[float] = []
    ys: list[float] = []
    for c in loop.curves:
        if isinstance(c, Line):
            xs.extend((c.start[0], c.end[0]))
            ys.extend((c.start[1], c.end[1]))
        elif isinstance(c, Arc):
            center, r, sweep, a0 = arc_params(c)
            xs.extend((c.start[0], c.end[0]))
            ys.extend((c.start[1], c.end[1]))
            # quadrant points falling inside the swept angle
            lo, hi = (a0, a0 + sweep) if sweep > 0 else (a0 + sweep, a0)
            k0 = math.ceil(lo / _HALF_PI)
            k1 = math.floor(hi / _HALF_PI)
            for k in range(k0, k1 + 1):
                ang = k * _HALF_PI
                xs.append(center[0] + r * math.cos(ang))
                ys.append(center[1] + r * math.sin(ang))
        else:
            xs.extend((c.center[0] - c.radius, c.center[0] + c.radius))
            ys.extend((c.center[1] - c.radius, c.center[1] + c.radius))
    x0, y0 = min(xs), min(ys)
    return (x0, y0, max(xs) - x0, max(ys) - y0)


def loop_score(bbox: tuple[float, float, float, float],
               alpha: float = DEFAULT_SORT_ALPHA,
               beta: float = DEFAULT_SORT_BETA) -> float:
    """Sorting score S = w*h + alpha*sqrt(w^2 + h^2) - beta*(x + y)."""
    x, y, w, h = bbox
    return w * h + alpha * math.hypot(w, h) - beta * (x + y)


def _signed_curvature(a: Arc) -> float:
    """Signed 1/radius from coordinate differences only (translation exact).

    kappa = 2 * cross(mid-start, end-mid) / (|mid-start| |end-mid| |end-start|);
    positive turns left. Uses the circumradius side-length identity.
    """
    ux, uy = a.mid[0] - a.start[0], a.mid[1] - a.start[1]
    vx, vy = a.end[0] - a.mid[0], a.end[1] - a.mid[1]
    wx, wy = a.end[0] - a.start[0], a.end[1] - a.start[1]
    cross = ux * vy - uy * vx
    den = math.hypot(ux, uy) * math.hypot(vx, vy) * math.hypot(wx, wy)
    if den == 0.0:
        raise GeometryError("degenerate arc")
    return 2.0 * cross / den


def _arc_is_minor(a: Arc, kappa: float) -> bool:
    # |sweep| <= pi iff the sagitta does not exceed the radius
    if kappa == 0.0:
        return True
    mx = a.mid[0] - 0.5 * (a.start[0] + a.end[0])
    my = a.mid[1] - 0.5 * (a.start[1] + a.end[1])
    return math.hypot(mx, my) <= (1.0 + 1e-9) / abs(kappa)


def entry_tangent(c: Curve) -> float:
    """Heading of a curve at its start point, wrapped to (-pi, pi]."""
    if isinstance(c, Line):
        return wrap_angle(math.atan2(c.end[1] - c.start[1], c.end[0] - c.start[0]))
    if isinstance(c, Arc):
        kappa = _signed_curvature(c)
        dx, dy = c.end[0] - c.start[0], c.end[1] - c.start[1]
        l = math.hypot(dx, dy)
        phi = 2.0 * math.asin(max(-1.0, min(1.0, 0.5 * l * kappa)))
        return wrap_angle(math.atan2(dy, dx) - 0.5 * phi)
    return _HALF_PI  # circle starts at angle 0, tangent +y


def canonical_start(loop: Loop) -> Loop:
    """Rotate the curve list so it begins at the curve whose start point is
    lexicographically smallest (y, then x)."""
    if len(loop.curves) <= 1:
        return loop
    best = 0
    bx, by = curve_start(loop.curves[0])
    for i, c in enumerate(loop.curves[1:], start=1):
        sx, sy = curve_start(c)
        if (sy, sx) < (by, bx):
            best, bx, by = i, sx, sy
    if best == 0:
        return loop
    return Loop(loop.curves[best:] + loop.curves[:best])


def sort_loops(loops: Sequence[Loop],
               alpha: float = DEFAULT_SORT_ALPHA,
               beta: float = DEFAULT_SORT_BETA) -> list[tuple[Loop, SpAnchor]]:
    """Canonical loop order: descending score, ties by ascending (x_m, y_m)
    then original index. Each loop is rotated to its canonical start curve
    and paired with its SpAnchor."""
    entries = []
    for i, lp in enumerate(loops):
        rot = canonical_start(lp)
        bbox = loop_bbox(rot)
        score = loop_score(bbox, alpha, beta)
        start = curve_start(rot.curves[0])
        theta = entry_tangent(rot.curves[0])
        anchor = SpAnchor(score, start, theta, bbox)
        entries.append((-score, bbox[0], bbox[1], i, rot, anchor))
    entries.sort(key=lambda e: e[:4])
    return [(rot, anchor) for _, _, _, _, rot, anchor in entries]


# --------------------------------------------------------------------------
# curve-level codec

def encode_cc(loop: Loop, anchor: SpAnchor) -> list[CcToken]:
    """Encode a loop as relative curve tokens plus a terminal EOS.

    Every field is built from coordinate differences, so translating the
    loop (and anchor) leaves the tokens byte-identical. Residuals (dx, dy)
    are the difference between the true chord displacement and the one the
    (l, dtheta, kappa) triple reproduces; they are ~0 at full precision.
    """
    if not loop.is_closed():
        raise OpenLoopError("loop does not close within tolerance")
    sx, sy = curve_start(loop.curves[0])
    if math.hypot(sx - anchor.p_start[0], sy - anchor.p_start[1]) > 1e-9:
        raise OpenLoopError("anchor start point does not match loop start")

    theta = anchor.theta_start
    tokens: list[CcToken] = []
    for c in loop.curves:
        if isinstance(c, Line):
            ex, ey = c.end[0] - c.start[0], c.end[1] - c.start[1]
            l = math.hypot(ex, ey)
            turn = wrap_angle(math.atan2(ey, ex) - theta)
            h = theta + turn
            rx = ex - l * math.cos(h)
            ry = ey - l * math.sin(h)
            tokens.append(CcToken(l, turn, 0.0, rx, ry, CurveType.LINE))
            theta = h
        elif isinstance(c, Arc):
            kappa = _signed_curvature(c)
            if not _arc_is_minor(c, kappa):
                raise GeometryError("arc sweep exceeds pi; split it first")
            ex, ey = c.end[0] - c.start[0], c.end[1] - c.start[1]
            l = math.hypot(ex, ey)
            phi = 2.0 * math.asin(max(-1.0, min(1.0, 0.5 * l * kappa)))
            turn = wrap_angle(math.atan2(ey, ex) - 0.5 * phi - theta)
            h = theta + turn
            rx = ex - l * math.cos(h + 0.5 * phi)
            ry = ey - l * math.sin(h + 0.5 * phi)
            tokens.append(CcToken(l, turn, kappa, rx, ry, CurveType.ARC))
            theta = h + phi
        else:
            turn = wrap_angle(_HALF_PI - theta)
            tokens.append(CcToken(0.0, turn, 1.0 / c.radius, 0.0, 0.0, CurveType.ARC))
            theta = theta + turn
    tokens.append(EOS_TOKEN)
    return tokens


class DecodedLoop(NamedTuple):
    loop: Loop
    closure_residual: float


def decode_cc(tokens: Sequence[CcToken], anchor: SpAnchor) -> DecodedLoop:
    """Integrate relative tokens back into curves from the anchor.

    closure_residual is the norm of the summed chord displacements implied
    by (l, dtheta, kappa) alone, ignoring the stored residuals: zero for a
    loop that closes through its relative parameters.
    """
    if not tokens or tokens[-1].t != CurveType.EOS:
        raise MalformedTokenError("token run must end with EOS")
    if len(tokens) < 2:
        raise MalformedTokenError("empty token run")
    body = tokens[:-1]
    if any(tok.t == CurveType.EOS for tok in body):
        raise MalformedTokenError("EOS mid-stream followed by tokens")

    theta = anchor.theta_start
    pos = anchor.p_start
    sum_x = 0.0
    sum_y = 0.0
    curves: list[Curve] = []
    for tok in body:
        h = theta + tok.dtheta
        if tok.t == CurveType.ARC and tok.l <= 1e-12:
            # circle sentinel
            if tok.kappa == 0.0:
                raise MalformedTokenError("circle token with zero curvature")
            r = 1.0 / abs(tok.kappa)
            cx = pos[0] - math.sin(h) / tok.kappa
            cy = pos[1] + math.cos(h) / tok.kappa
            curves.append(Circle((cx, cy), r))
            theta = h
            continue
        if tok.t == CurveType.ARC and tok.kappa != 0.0:
            phi = 2.0 * math.asin(max(-1.0, min(1.0, 0.5 * tok.l * tok.kappa)))
            ch = h + 0.5 * phi
            dx = tok.l * math.cos(ch)
            dy = tok.l * math.sin(ch)
            end = (pos[0] + (dx + tok.dx), pos[1] + (dy + tok.dy))
            cx = pos[0] - math.sin(h) / tok.kappa
            cy = pos[1] + math.cos(h) / tok.kappa
            # place the mid at the angular midpoint between the decoded
            # endpoints; unlike rotating by phi/2, atan2 angles stay
            # accurate when l*kappa/2 approaches 1 (near-semicircles)
            a0 = math.atan2(pos[1] - cy, pos[0] - cx)
            a2 = math.atan2(end[1] - cy, end[0] - cx)
            if tok.kappa > 0:
                sweep = (a2 - a0) % math.tau or math.tau
            else:
                sweep = -((a0 - a2) % math.tau or math.tau)
            am = a0 + 0.5 * sweep
            rad = math.hypot(pos[0] - cx, pos[1] - cy)
            mid = (cx + rad * math.cos(am), cy + rad * math.sin(am))
            curves.append(Arc(pos, mid, end))
            theta = h + phi
        else:
            # Line token, or arc token whose curvature degenerated to 0
            dx = tok.l * math.cos(h)
            dy = tok.l * math.sin(h)
            end = (pos[0] + (dx + tok.dx), pos[1] + (dy + tok.dy))
            curves.append(Line(pos, end))
            theta = h
        sum_x += dx
        sum_y += dy
        pos = end
    return DecodedLoop(Loop(tuple(curves)), math.hypot(sum_x, sum_y))


# --------------------------------------------------------------------------
# program-level codec

def _rotate_loop(loop: Loop, rho: float) -> Loop:
    co, si = math.cos(rho), math.sin(rho)

    def rot(p: Vec2) -> Vec2:
        return (p[0] * co - p[1] * si, p[0] * si + p[1] * co)

    out: list[Curve] = []
    for c in loop.curves:
        if isinstance(c, Line):
            out.append(Line(rot(c.start), rot(c.end)))
        elif isinstance(c, Arc):
            out.append(Arc(rot(c.start), rot(c.mid), rot(c.end)))
        else:
            out.append(Circle(rot(c.center), c.radius))
    return Loop(tuple(out))


def canonical_sketch_loops(block: ExtrudeBlock) -> tuple[Loop, ...]:
    """Re-express a block's loops in the canonical in-plane frame.

    When the block's x_axis already is the canonical one (rho == 0) the
    loops are returned untouched, bit for bit.
    """
    cx, cy = canonical_frame(block.plane.normal)
    ax = block.plane.x_axis
    rho = math.atan2(
        ax[0] * cy[0] + ax[1] * cy[1] + ax[2] * cy[2],
        ax[0] * cx[0] + ax[1] * cx[1] + ax[2] * cx[2],
    )
    if rho == 0.0:
        return block.loops
    return tuple(_rotate_loop(lp, rho) for lp in block.loops)


def encode_program(p: CadProgram,
                   alpha: float = DEFAULT_SORT_ALPHA,
                   beta: float = DEFAULT_SORT_BETA) -> HierTokens:
    """Tokenize a program into aligned EB/SP/CC streams (canonical form)."""
    eb: list[EbToken] = []
    sp: list[SpAnchor] = []
    cc: list[CcToken] = []
    sp_block: list[int] = []
    cc_sp: list[int] = []
    for bi, block in enumerate(p.blocks):
        eb.append(EbToken(block.plane.normal, block.plane.origin, block.depth, block.op))
        for lp, anchor in sort_loops(canonical_sketch_loops(block), alpha, beta):
            run = encode_cc(lp, anchor)
            sp.append(anchor)
            sp_block.append(bi)
            cc.extend(run)
            cc_sp.extend([len(sp) - 1] * len(run))
    return HierTokens(tuple(eb), tuple(sp), tuple(cc), tuple(sp_block), tuple(cc_sp))


def _validate_alignment(t: HierTokens) -> None:
    if len(t.sp_block) != len(t.sp):
        raise InconsistentStreamsError("sp_block length != SP stream length")
    if len(t.cc_sp) != len(t.cc):
        raise InconsistentStreamsError("cc_sp length != CC stream length")
    if not t.eb:
        raise InconsistentStreamsError("empty EB stream")
    if not t.sp:
        raise InconsistentStreamsError("empty SP stream")
    prev = 0
    seen = set()
    for si, bi in enumerate(t.sp_block):
        if not 0 <= bi < len(t.eb):
            raise InconsistentStreamsError(f"sp_block[{si}] out of range")
        if bi < prev:
            raise InconsistentStreamsError("sp_block must be grouped by block")
        prev = bi
        seen.add(bi)
    if seen != set(range(len(t.eb))):
        raise InconsistentStreamsError("every block needs at least one SP entry")
    prev = 0
    for ci, si in enumerate(t.cc_sp):
        if not 0 <= si < len(t.sp):
            raise InconsistentStreamsError(f"cc_sp[{ci}] out of range")
        if si < prev:
            raise InconsistentStreamsError("cc_sp must be grouped by SP entry")
        prev = si


def decode_program(t: HierTokens) -> CadProgram:
    """Rebuild a CadProgram from token streams.

    Planes use the canonical in-plane frame of each EB normal; boolean ops
    come from the one-hot argmax. Raises InconsistentStreamsError when the
    alignment tables disagree, and propagates curve-level token errors.
    """
    _validate_alignment(t)
    runs = t.cc_runs()
    if any(len(r) == 0 for r in runs):
        raise InconsistentStreamsError("SP entry without CC run")

    loops_per_block: list[list[Loop]] = [[] for _ in t.eb]
    for anchor, run, bi in zip(t.sp, runs, t.sp_block):
        loops_per_block[bi].append(decode_cc(run, anchor).loop)

    blocks = []
    for bi, tok in enumerate(t.eb):
        if tok.h_ext <= 0.0:
            raise GeometryError(f"block {bi}: extrusion depth must be > 0")
        plane = make_plane(tok.n_sketch, tok.p_origin)
        op = tok.b_type
        if bi == 0 and op is not BooleanOp.NEW:
            raise GeometryError("first block op must be 'new'")
        blocks.append(ExtrudeBlock(plane, tuple(loops_per_block[bi]), tok.h_ext, op))
    return CadProgram(tuple(blocks))


def closure_residuals(t: HierTokens) -> list[float]:
    """Per-loop closure residuals of the CC stream, in SP order."""
    _validate_alignment(t)
    return [
        decode_cc(run, anchor).closure_residual
        for anchor, run in zip(t.sp, t.cc_runs())
    ]


# --------------------------------------------------------------------------
# JSON envelope

def tokens_to_json(t: HierTokens) -> str:
    """Serialize streams to the JSON envelope (full float precision)."""
    doc = {
        "eb": [tok.raw() for tok in t.eb],
        "sp": [tok.raw() for tok in t.sp],
        "cc": [tok.raw() for tok in t.cc],
        "align": {"sp_block": list(t.sp_block), "cc_sp": list(t.cc_sp)},
    }
    return json.dumps(doc, indent=2)


def _row(v: Any, n: int, path: str) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise SchemaError(f"{path}: expected array of {n} numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise SchemaError(f"{path}[{i}]: expected number")
        out.append(float(x))
    return out


def _argmax_onehot(vals: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(vals):
        if v > vals[best]:
            best = i
    return best


def tokens_from_json(text: str) -> HierTokens:
    """Parse the JSON envelope back into HierTokens.

    One-hot fields are read by argmax so dequantized (soft) rows survive.
    CcToken invariants (zero kappa on lines, zeroed EOS rows) are restored
    on the way in.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"$: invalid JSON: {e.msg}") from e
    if not isinstance(doc, dict):
        raise SchemaError("$: expected object")
    for key in ("eb", "sp", "cc", "align"):
        if key not in doc:
            raise SchemaError(f"$.{key}: missing field")
    if not isinstance(doc["eb"], list) or not isinstance(doc["sp"], list) \
            or not isinstance(doc["cc"], list):
        raise SchemaError("$: eb/sp/cc must be arrays")

    eb = []
    for i, row in enumerate(doc["eb"]):
        v = _row(row, EB_DIM, f"$.eb[{i}]")
        eb.append(EbToken(
            (v[0], v[1], v[2]), (v[3], v[4], v[5]), v[6],
            _OPS[_argmax_onehot(v[7:10])],
        ))
    sp = []
    for i, row in enumerate(doc["sp"]):
        v = _row(row, SP_DIM, f"$.sp[{i}]")
        sp.append(SpAnchor(v[0], (v[1], v[2]), v[3], (0.0, 0.0, v[4], v[5])))
    cc = []
    for i, row in enumerate(doc["cc"]):
        v = _row(row, CC_DIM, f"$.cc[{i}]")
        kind = CurveType(_argmax_onehot(v[5:8]))
        if kind == CurveType.EOS:
            cc.append(EOS_TOKEN)
        elif kind == CurveType.LINE:
            cc.append(CcToken(v[0], v[1], 0.0, v[3], v[4], kind))
        else:
            cc.append(CcToken(v[0], v[1], v[2], v[3], v[4], kind))

    align = doc["align"]
    if not isinstance(align, dict):
        raise SchemaError("$.align: expected object")
    for key in ("sp_block", "cc_sp"):
        if key not in align or not isinstance(align[key], list):
            raise SchemaError(f"$.align.{key}: expected array")
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in align[key]):
            raise SchemaError(f"$.align.{key}: expected integers")
    return HierTokens(
        tuple(eb), tuple(sp), tuple(cc),
        tuple(align["sp_block"]), tuple(align["cc_sp"]),
    )
