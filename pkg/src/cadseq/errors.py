"""Exception taxonomy shared by all cadseq modules.

Every error raised by the public API derives from CadseqError so callers
can catch one root type. The CLI maps subtrees onto exit codes.
"""

from __future__ import annotations


class CadseqError(Exception):
    """Root of all cadseq exceptions."""


# ---------------------------------------------------------------- programs

class SchemaError(CadseqError):
    """Program JSON is missing a field, has an ill-typed field, or violates
    a field-value constraint. Message carries a JSON path like
    ``$.blocks[0].loops[1].curves[2].start``."""


class GeometryError(CadseqError):
    """Curve or loop geometry is degenerate (open loop, zero radius,
    collinear arc, zero-length line)."""


class EmptySolidError(CadseqError):
    """Program compiles to nothing (for example a Cut removes everything)."""


# ------------------------------------------------------------------ tokens

class OpenLoopError(CadseqError):
    """Loop handed to the curve encoder does not close."""


class MalformedTokenError(CadseqError):
    """Token run is not EOS-terminated, or EOS appears mid-stream."""


class InconsistentStreamsError(CadseqError):
    """Hierarchy alignment tables disagree (e.g. CC run count != SP count)."""


# -------------------------------------------------------------- featurize

class DimensionError(CadseqError):
    """Raw feature width does not match the level's expected width."""


class EmptyCodebookError(CadseqError):
    """Quantize called against a codebook with no entries."""


class InsufficientDataError(CadseqError):
    """Codebook training asked for more clusters than feature rows."""


class ShapeError(CadseqError):
    """Loss inputs have mismatched shapes."""


# ----------------------------------------------------------------- kernel

class SelfIntersectionError(CadseqError):
    """A loop self-intersects, or two loops of one sketch cross."""


class NestingError(CadseqError):
    """A hole loop is not contained in any outer loop."""


class TessellationError(CadseqError):
    """Cap triangulation failed or lost boundary vertices."""


class OpenMeshError(CadseqError):
    """Membership query against a mesh that is not watertight."""


class IoError(CadseqError):
    """Export or import could not read/write the target path."""


# --------------------------------------------------------------- pointops

class DegenerateNeighborhoodError(CadseqError):
    """All k nearest neighbors of a point are coincident."""


class SampleSizeError(CadseqError):
    """Resample without replacement asked for more points than exist."""


# ------------------------------------------------------------------ align

class ZeroVectorError(CadseqError):
    """An embedding row has zero norm and cannot be cosine-normalized."""


# -------------------------------------------------------------- diffusion

class InconsistentStateError(CadseqError):
    """Corrupted lattice disagrees with the clean lattice somewhere other
    than a masked position."""


class InvalidDistributionError(CadseqError):
    """Denoiser output is not a row-stochastic matrix."""


class ResidualMaskError(CadseqError):
    """Sampling finished with MASK tokens still present."""


# ---------------------------------------------------------------- metrics

class EmptySetError(CadseqError):
    """Metric input point set or shape collection is empty."""


class EmptyMeshError(CadseqError):
    """Mesh metric called on a mesh with no triangles."""
