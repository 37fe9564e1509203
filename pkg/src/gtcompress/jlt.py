"""Johnson-Lindenstrauss compression of the attention maps.

A random Gaussian map M with entries N(0, 1/d) preserves the pairwise
query-key dot products of n vectors up to eps with high probability
once d is on the order of log(n) / eps^2. Multiplying W_Q and W_K by
such a map therefore shrinks the score computation from width D to d
while leaving values, feed-forward weights, and outputs untouched.

Each layer draws a fresh map (seeded as base seed + layer index) since
reusing one across layers would correlate the distortions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .graph_io import CompressedModel, Model
from .linalg import as_matrix

DEFAULT_JL_CONSTANT = 8.0


def jl_dim(n: int, eps: float, c: float = DEFAULT_JL_CONSTANT, d_max: int | None = None) -> int:
    """Target dimension ceil(c * ln(n) / eps^2), clamped to [1, d_max].

    The eps window (0, 1/2) matches the regime the distortion bound is
    stated for; values outside it are rejected rather than clamped.
    """
    if n < 1:
        raise ValidationError(f"jl_dim: n={n} must be >= 1")
    if not (0.0 < eps < 0.5):
        raise ValidationError(f"jl_dim: eps={eps} outside (0, 1/2)")
    if c <= 0:
        raise ValidationError(f"jl_dim: c={c} must be > 0")
    d = math.ceil(c * math.log(n) / eps**2) if n > 1 else 1
    d = max(d, 1)
    if d_max is not None:
        if d_max < 1:
            raise ValidationError(f"jl_dim: d_max={d_max} must be >= 1")
        d = min(d, d_max)
    return d


@dataclass
class JlMap:
    """A linear sketch m (d x source_dim) tagged with how it was drawn."""

    m: np.ndarray
    seed: int | None
    distribution: str

    @property
    def d(self) -> int:
        return self.m.shape[0]


def sample_jl(d: int, source_dim: int, seed: int) -> JlMap:
    """Gaussian sketch with i.i.d. N(0, 1/d) entries."""
    if d < 1 or source_dim < 1:
        raise ValidationError(f"sample_jl: bad shape ({d}, {source_dim})")
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((d, source_dim)) / np.sqrt(d)
    return JlMap(m=m, seed=seed, distribution="gaussian")


def identity_map(dim: int) -> JlMap:
    """Debug sketch: the identity, so compression is a no-op."""
    return JlMap(m=np.eye(dim), seed=None, distribution="identity")


def verify_dot_preservation(jl: JlMap, pairs, gamma: float) -> float:
    """Largest dot-product deviation |(Mx).(My) - x.y| over the pairs.

    Every vector must satisfy ||x||^2 <= gamma (small slack allowed);
    gamma is the scale the deviation should be compared against.
    """
    if gamma <= 0:
        raise ValidationError(f"verify_dot_preservation: gamma={gamma} must be > 0")
    bound = np.sqrt(gamma) * (1.0 + 1e-9)
    worst = 0.0
    for idx, (x, y) in enumerate(pairs):
        xv = np.asarray(x, dtype=np.float64)
        yv = np.asarray(y, dtype=np.float64)
        if np.linalg.norm(xv) > bound or np.linalg.norm(yv) > bound:
            raise ValidationError(
                f"verify_dot_preservation: pair {idx} exceeds norm bound sqrt(gamma)"
            )
        dev = abs(float((jl.m @ xv) @ (jl.m @ yv)) - float(xv @ yv))
        worst = max(worst, dev)
    return worst


def compress_attention_jlt(
    model: Model, d: int, seed: int, debug_identity: bool = False
) -> CompressedModel:
    """Replace each layer's W_Q, W_K with M @ W_Q, M @ W_K.

    M is a fresh (d, D) Gaussian sketch per layer, drawn from
    seed + layer index. With ``debug_identity`` (requires d == D) the
    sketches are identity matrices and the result reproduces the
    reference bit for bit. Values and feed-forward weights are shared
    with the input model, so outputs need no lift.
    """
    width = model.width
    if not (1 <= d <= width):
        raise ValidationError(f"compress_attention_jlt: d={d} outside [1, {width}]")
    if debug_identity and d != width:
        raise ValidationError(
            f"compress_attention_jlt: identity debug needs d == D, got d={d}, D={width}"
        )
    layers = []
    for ell, lw in enumerate(model.layers):
        jl = identity_map(width) if debug_identity else sample_jl(d, width, seed + ell)
        layers.append(
            replace(lw, w_q=as_matrix(jl.m @ lw.w_q), w_k=as_matrix(jl.m @ lw.w_k))
        )
    return CompressedModel(
        d_in=model.d_in,
        width=width,
        n_layers=model.n_layers,
        layers=layers,
        use_sqrt_d=model.use_sqrt_d,
        activation=model.activation,
        d=d,
        u_out=None,
    )
