"""Vectorized numpy fallback for the per-edge attention kernel.

Same contract as the compiled module. Segment reductions use
np.maximum.reduceat / np.add.reduceat, which requires every CSR
segment to be nonempty; the graph type guarantees that.
"""

import numpy as np


def edge_attention(q, k, v, indptr, targets, scale):
    """Attention-weighted neighbor pooling over a CSR edge list.

    See the compiled twin for the full contract. Returns (pooled, att).
    """
    n = q.shape[0]
    counts = np.diff(indptr)
    src = np.repeat(np.arange(n, dtype=np.intp), counts)
    scores = scale * np.einsum("ed,ed->e", q[src], k[targets])
    starts = indptr[:-1]
    seg_max = np.maximum.reduceat(scores, starts)
    w = np.exp(scores - seg_max[src])
    denom = np.add.reduceat(w, starts)
    att = w / denom[src]
    pooled = np.add.reduceat(att[:, None] * v[targets], starts, axis=0)
    return pooled, att
