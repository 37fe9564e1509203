"""Single-head graph transformer forward pass with full trace capture.

Each layer computes value/query/key images of the current embeddings,
softmax-normalizes the per-edge scores over each node's neighborhood,
pools the neighbor values with those weights, and finishes with a
two-layer ReLU feed-forward block. The per-edge work runs through the
selected attention kernel backend; everything else is BLAS.

The forward keeps every intermediate (per-edge attention weights
included) because the compression schemes and their verification both
consume the trace, not just the output. Nodes are independent given
the layer input, so a caller could shard the node loop; the kernel
here is already vectorized and single-process.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import backend
from .errors import ValidationError
from .graph_io import AttentionGraph, LayerWeights, Model, validate_model
from .linalg import as_matrix, operator_norm

__all__ = [
    "LayerTrace",
    "ForwardTrace",
    "NormAudit",
    "model_forward",
    "layer_forward",
    "random_model",
    "audit_norms",
]


@dataclass
class LayerTrace:
    """Intermediates of one layer, columns indexed by node.

    ``att`` holds the per-edge attention weights in the graph's
    canonical edge order; weights of each node's out-edges sum to 1.
    """

    h_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray
    pooled: np.ndarray
    activated: np.ndarray
    h_out: np.ndarray


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]

    @property
    def output(self) -> np.ndarray:
        return self.layers[-1].h_out


def _score_scale(model: Model) -> float:
    # The optional score normalization always uses the declared
    # reference width, so reference and compressed runs of the same
    # family stay comparable.
    return 1.0 / np.sqrt(model.width) if model.use_sqrt_d else 1.0


def layer_forward(
    lw: LayerWeights, h: np.ndarray, graph: AttentionGraph, scale: float = 1.0
) -> LayerTrace:
    q = lw.w_q @ h
    k = lw.w_k @ h
    v = lw.w_v @ h
    pooled_rows, att = backend.edge_attention(
        np.ascontiguousarray(q.T),
        np.ascontiguousarray(k.T),
        np.ascontiguousarray(v.T),
        graph.indptr,
        graph.targets,
        scale,
    )
    pooled = pooled_rows.T
    pre = lw.w_1 @ pooled
    if lw.b_1 is not None:
        pre = pre + lw.b_1[:, None]
    activated = np.maximum(pre, 0.0)
    h_out = lw.w_2 @ activated
    return LayerTrace(
        h_in=h, q=q, k=k, v=v, att=att, pooled=pooled, activated=activated, h_out=h_out
    )


def model_forward(model: Model, x, graph: AttentionGraph) -> ForwardTrace:
    """Run the full network on features ``x`` (d_in, n); returns the trace."""
    h = as_matrix(x, "features")
    validate_model(model)
    if h.shape[0] != model.d_in:
        raise ValidationError(
            f"features have {h.shape[0]} rows, model expects d_in={model.d_in}"
        )
    if h.shape[1] != graph.n:
        raise ValidationError(
            f"features cover {h.shape[1]} nodes, graph has {graph.n}"
        )
    scale = _score_scale(model)
    traces = []
    for lw in model.layers:
        t = layer_forward(lw, h, graph, scale)
        traces.append(t)
        h = t.h_out
    return ForwardTrace(layers=traces)


def random_model(
    d_in: int,
    width: int,
    n_layers: int,
    seed: int,
    target_beta: float = 1.0,
    feature_alpha: float = 1.0,
    use_sqrt_d: bool = False,
    with_bias: bool = False,
) -> tuple[Model, Callable[[int, int], np.ndarray]]:
    """Gaussian model with every weight rescaled to operator norm
    ``target_beta``, plus a matching feature sampler.

    The sampler maps (n, seed) to a (d_in, n) array whose columns all
    have norm exactly sqrt(feature_alpha). Same seeds, same bits.
    """
    if min(d_in, width, n_layers) < 1:
        raise ValidationError("random_model: d_in, width, n_layers must be >= 1")
    if target_beta <= 0 or feature_alpha <= 0:
        raise ValidationError("random_model: target_beta and feature_alpha must be > 0")
    rng = np.random.default_rng(seed)

    def draw(rows, cols):
        w = rng.standard_normal((rows, cols))
        return w * (target_beta / operator_norm(w, tol=1e-9))

    layers = []
    for ell in range(n_layers):
        cols = d_in if ell == 0 else width
        layers.append(
            LayerWeights(
                w_v=draw(width, cols),
                w_q=draw(width, cols),
                w_k=draw(width, cols),
                w_1=draw(width, width),
                w_2=draw(width, width),
                b_1=rng.standard_normal(width) * 0.1 if with_bias else None,
            )
        )
    model = Model(
        d_in=d_in,
        width=width,
        n_layers=n_layers,
        layers=layers,
        use_sqrt_d=use_sqrt_d,
    )

    def sample_features(n: int, feature_seed: int) -> np.ndarray:
        frng = np.random.default_rng(feature_seed)
        x = frng.standard_normal((d_in, n))
        norms = np.linalg.norm(x, axis=0)
        norms[norms == 0.0] = 1.0
        return x * (np.sqrt(feature_alpha) / norms)

    return model, sample_features


@dataclass
class NormAudit:
    """Measured norm profile of a model, optionally with a data trace.

    ``operator_norms`` is one dict per layer (matrix name to norm).
    ``input_norms`` holds per-layer [max, mean] column norms of the
    layer inputs when features were supplied. The two bounds the error
    analysis leans on are reported directly: ``beta_estimate`` is the
    largest operator norm, ``alpha_estimate`` the largest squared
    input-vector norm.
    """

    operator_norms: list[dict]
    input_norms: list[dict]
    operator_avg: float
    operator_std: float
    vector_avg: float | None
    vector_std: float | None
    alpha_estimate: float | None
    beta_estimate: float

    def to_dict(self) -> dict:
        return {
            "operator_norms": self.operator_norms,
            "input_norms": self.input_norms,
            "summary": {
                "operator_avg": self.operator_avg,
                "operator_std": self.operator_std,
                "vector_avg": self.vector_avg,
                "vector_std": self.vector_std,
                "alpha_estimate": self.alpha_estimate,
                "beta_estimate": self.beta_estimate,
            },
        }

    def render(self) -> str:
        lines = [
            f"matrix operator norms (avg ± std): "
            f"{self.operator_avg:.2f} ± {self.operator_std:.2f}"
        ]
        if self.vector_avg is not None:
            lines.append(
                f"layer input norms     (avg ± std): "
                f"{self.vector_avg:.2f} ± {self.vector_std:.2f}"
            )
        lines.append(f"beta estimate (max operator norm): {self.beta_estimate:.6g}")
        if self.alpha_estimate is not None:
            lines.append(
                f"alpha estimate (max squared input norm): {self.alpha_estimate:.6g}"
            )
        return "\n".join(lines)


def audit_norms(
    model: Model, x=None, graph: AttentionGraph | None = None, tol: float = 1e-9
) -> NormAudit:
    """Measure operator norms of all weights and, when data is given,
    the per-layer input vector norms of the induced trace."""
    per_layer = []
    for lw in model.layers:
        per_layer.append({name: operator_norm(w, tol=tol) for name, w in lw.named()})
    all_ops = np.array([v for block in per_layer for v in block.values()])
    input_stats: list[dict] = []
    vec_norms = None
    if x is not None:
        if graph is None:
            raise ValidationError("audit_norms: features given without a graph")
        trace = model_forward(model, x, graph)
        collected = []
        for ell, t in enumerate(trace.layers):
            norms = np.linalg.norm(t.h_in, axis=0)
            input_stats.append(
                {"layer": ell, "max": float(norms.max()), "mean": float(norms.mean())}
            )
            collected.append(norms)
        vec_norms = np.concatenate(collected)
    return NormAudit(
        operator_norms=per_layer,
        input_norms=input_stats,
        operator_avg=float(all_ops.mean()),
        operator_std=float(all_ops.std()),
        vector_avg=float(vec_norms.mean()) if vec_norms is not None else None,
        vector_std=float(vec_norms.std()) if vec_norms is not None else None,
        alpha_estimate=float(np.max(vec_norms**2)) if vec_norms is not None else None,
        beta_estimate=float(all_ops.max()),
    )
