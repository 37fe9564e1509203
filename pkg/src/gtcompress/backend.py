"""Selects the attention kernel implementation at import time.

The compiled extension is preferred when the build produced one; the
numpy fallback is always available. Setting GTC_FORCE_FALLBACK=1 in
the environment pins the fallback, which the benchmark and the parity
tests use to compare both paths in one process.
"""

import os

from . import _attention_py

try:
    from . import _attention as _compiled
except ImportError:
    _compiled = None

if _compiled is not None and not os.environ.get("GTC_FORCE_FALLBACK"):
    _active = _compiled
    _name = "compiled"
else:
    _active = _attention_py
    _name = "fallback"


def backend_name() -> str:
    return _name


def edge_attention(q, k, v, indptr, targets, scale):
    return _active.edge_attention(q, k, v, indptr, targets, scale)


def fallback_edge_attention(q, k, v, indptr, targets, scale):
    """Always the numpy path, regardless of selection."""
    return _attention_py.edge_attention(q, k, v, indptr, targets, scale)


def compiled_edge_attention(q, k, v, indptr, targets, scale):
    """Always the compiled path; raises if the extension is absent."""
    if _compiled is None:
        raise RuntimeError("compiled attention kernel not built")
    return _compiled.edge_attention(q, k, v, indptr, targets, scale)


def have_compiled() -> bool:
    return _compiled is not None
