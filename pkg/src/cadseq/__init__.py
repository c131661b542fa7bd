"""cadseq: hierarchical token codec, compiler and evaluation toolkit for
sketch-extrude CAD programs."""

__version__ = "0.1.0"

from .errors import CadseqError

__all__ = ["CadseqError", "__version__"]
