"""Triplet-based deep metric learning with the NPLB objective, plus the
single-visit health-risk toolkit built on top of it."""
from ._accel import backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
