"""Bilingual dictionary induction: alignment, retrieval and evaluation diagnostics."""

from bdieval.errors import BDIError, FormatError

__version__ = "0.1.0"

__all__ = ["BDIError", "FormatError", "__version__"]
