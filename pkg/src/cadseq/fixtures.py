"""Hand-authored sketch-extrude programs used as the desk-scale corpus
for round-trip checks, metric batteries, and generation demos.

All coordinates are multiples of 1/16 and magnitudes stay below 8, so
adding any quarter-unit translation is exact in double precision; the
relative curve encoding then survives translation bit-for-bit. Planes use
the canonical in-plane frame. Volumes are simple closed forms, recorded
here for tests:

  unit_cube 1, tall_box 1/4, cylinder 2*pi, plate_with_hole 1 - pi/16,
  plate_with_two_holes 9/4 - pi/16, square_ring 3/2, disk_with_hole
  9*pi/16, l_bracket 3/2, hex_prism 7/2, translated_square_* 1,
  boss_join 1 + 3*pi/16, three_block 9/8, two_disjoint_cubes 2,
  stacked_cylinders 5*pi/8, rounded_slot 1/2 + pi/8 (+ the remaining two
  arc fixtures, whose caps are circular segments through fixed chords).
"""

from __future__ import annotations

from .cadprog import (
    Arc,
    BooleanOp,
    CadProgram,
    Circle,
    ExtrudeBlock,
    Line,
    Loop,
    SketchPlane,
    canonical_frame,
)


def _plane(normal=(0.0, 0.0, 1.0), origin=(0.0, 0.0, 0.0)) -> SketchPlane:
    x_axis, _ = canonical_frame(normal)
    return SketchPlane(tuple(normal), tuple(origin), x_axis)


def _poly(*pts) -> Loop:
    n = len(pts)
    return Loop(tuple(Line(pts[i], pts[(i + 1) % n]) for i in range(n)))


def _rect(x0: float, y0: float, w: float, h: float, hole: bool = False) -> Loop:
    pts = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
    if hole:
        pts.reverse()
    return _poly(*pts)


def _block(loops, depth, op=BooleanOp.NEW, normal=(0.0, 0.0, 1.0),
           origin=(0.0, 0.0, 0.0)) -> ExtrudeBlock:
    return ExtrudeBlock(_plane(normal, origin), tuple(loops), depth, op)


def unit_cube() -> CadProgram:
    return CadProgram((_block([_rect(0, 0, 1, 1)], 1.0),))


def tall_box() -> CadProgram:
    return CadProgram((_block([_rect(0, 0, 0.5, 0.25)], 2.0),))


def cylinder() -> CadProgram:
    return CadProgram((_block([Loop((Circle((0.0, 0.0), 1.0),))], 2.0),))


def plate_with_hole() -> CadProgram:
    loops = [_rect(0, 0, 2, 2), Loop((Circle((1.0, 1.0), 0.5),))]
    return CadProgram((_block(loops, 0.25),))


def plate_with_two_holes() -> CadProgram:
    loops = [_rect(0, 0, 3, 1.5),
             Loop((Circle((0.75, 0.75), 0.25),)),
             Loop((Circle((2.25, 0.75), 0.25),))]
    return CadProgram((_block(loops, 0.5),))


def square_ring() -> CadProgram:
    loops = [_rect(0, 0, 2, 2), _rect(0.5, 0.5, 1, 1, hole=True)]
    return CadProgram((_block(loops, 0.5),))


def disk_with_hole() -> CadProgram:
    loops = [Loop((Circle((0.0, 0.0), 1.0),)),
             Loop((Circle((0.0, 0.0), 0.5),))]
    return CadProgram((_block(loops, 0.75),))


def l_bracket() -> CadProgram:
    loop = _poly((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2))
    return CadProgram((_block([loop], 0.5),))


def hex_prism() -> CadProgram:
    loop = _poly((1, 0), (2, 0), (2.5, 1), (2, 2), (1, 2), (0.5, 1))
    return CadProgram((_block([loop], 1.0),))


def translated_square(dx: float = 0.0, dy: float = 0.0) -> CadProgram:
    return CadProgram((_block([_rect(dx, dy, 1, 1)], 1.0),))


def translated_square_a() -> CadProgram:
    return translated_square(0.0, 0.0)


def translated_square_b() -> CadProgram:
    return translated_square(2.0, 0.0)


def translated_square_c() -> CadProgram:
    return translated_square(0.0, 2.0)


def translated_square_d() -> CadProgram:
    return translated_square(2.5, 1.5)


def boss_join() -> CadProgram:
    plate = _block([_rect(0, 0, 2, 2)], 0.25)
    boss = _block([Loop((Circle((1.0, 1.0), 0.5),))], 0.75, BooleanOp.JOIN,
                  origin=(0.0, 0.0, 0.25))
    return CadProgram((plate, boss))


def three_block() -> CadProgram:
    base = _block([_rect(0, 0, 1, 1)], 1.0)
    wing = _block([_rect(0.5, 0.25, 1, 0.5)], 1.0, BooleanOp.JOIN)
    notch = _block([_rect(1.25, 0.25, 0.5, 0.5)], 1.0, BooleanOp.CUT)
    return CadProgram((base, wing, notch))


def two_disjoint_cubes() -> CadProgram:
    a = _block([_rect(0, 0, 1, 1)], 1.0)
    b = _block([_rect(2, 0, 1, 1)], 1.0, BooleanOp.JOIN)
    return CadProgram((a, b))


def rounded_slot() -> CadProgram:
    loop = Loop((
        Line((0.5, 0.0), (1.5, 0.0)),
        Arc((1.5, 0.0), (2.0, 0.5), (1.5, 1.0)),
        Line((1.5, 1.0), (0.5, 1.0)),
        Arc((0.5, 1.0), (0.0, 0.5), (0.5, 0.0)),
    ))
    return CadProgram((_block([loop], 0.5),))


def quarter_fillet_plate() -> CadProgram:
    loop = Loop((
        Line((0.0, 0.0), (2.0, 0.0)),
        Line((2.0, 0.0), (2.0, 1.0)),
        Arc((2.0, 1.0), (1.75, 1.75), (1.0, 2.0)),
        Line((1.0, 2.0), (0.0, 2.0)),
        Line((0.0, 2.0), (0.0, 0.0)),
    ))
    return CadProgram((_block([loop], 0.5),))


def arc_wedge() -> CadProgram:
    loop = Loop((
        Line((0.0, 0.0), (2.0, 0.0)),
        Arc((2.0, 0.0), (1.5, 1.5), (0.0, 2.0)),
        Line((0.0, 2.0), (0.0, 0.0)),
    ))
    return CadProgram((_block([loop], 0.5),))


def stacked_cylinders() -> CadProgram:
    lower = _block([Loop((Circle((0.0, 0.0), 1.0),))], 0.5)
    upper = _block([Loop((Circle((0.0, 0.0), 0.5),))], 0.5, BooleanOp.JOIN,
                   origin=(0.0, 0.0, 0.5))
    return CadProgram((lower, upper))


def tilted_trapezoid() -> CadProgram:
    """Non-canonical plane (unit tests only; not part of the corpus)."""
    loop = _poly((0, 0), (2, 0), (1.5, 1), (0.5, 1))
    return CadProgram((_block([loop], 0.5, normal=(0.0, 0.6, 0.8)),))


def cut_annihilation() -> CadProgram:
    """CUT removes the whole solid; compiling this must fail."""
    body = _block([_rect(0, 0, 1, 1)], 1.0)
    eraser = _block([_rect(-1, -1, 3, 3)], 2.0, BooleanOp.CUT,
                    origin=(0.0, 0.0, -0.5))
    return CadProgram((body, eraser))


def corpus() -> dict[str, CadProgram]:
    """The 20 canonical fixtures, in a stable order."""
    makers = [
        unit_cube, tall_box, cylinder, plate_with_hole,
        plate_with_two_holes, square_ring, disk_with_hole, l_bracket,
        hex_prism, translated_square_a, translated_square_b,
        translated_square_c, translated_square_d, boss_join, three_block,
        two_disjoint_cubes, rounded_slot, quarter_fillet_plate, arc_wedge,
        stacked_cylinders,
    ]
    return {fn.__name__: fn() for fn in makers}
