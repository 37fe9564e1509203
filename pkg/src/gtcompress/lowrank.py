"""Low-rank reparameterization of the transformer and leverage scores.

Three related tools:

* ``lowrank_lift``: given embeddings H (D x n), produce a width-d
  representation together with a lift U that reconstructs H. The
  projection flavor uses the top singular basis, so per-column error is
  never worse than the best rank-d surrogate's. The row-selection
  flavor restricts to d coordinates, which commutes with elementwise
  activations but can lose per-column closeness badly (see the
  counterexample fixture in the test suite).

* ``exact_compress`` / ``approx_compress``: rebuild the whole network
  at width d. When the features and every activation matrix have rank
  at most d the exact construction reproduces outputs to rounding.
  The approximate construction only assumes the trace matrices are
  near rank d and keeps the activation at width D, selecting
  coordinates where safe and projecting where selection would not be.

* leverage scores: row-sampling of a rank-d factor, with the weighted
  selection and its lift, plus a coverage report (which embeddings the
  selected coordinate subset reconstructs).

All constructions consume the reference trace, not just the weights:
the lifts are built from the activations the data actually produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph_io import AttentionGraph, CompressedModel, LayerWeights, Model
from .linalg import (
    DEFAULT_RANK_TOL,
    as_matrix,
    numerical_rank,
    pivoted_row_basis,
    pseudo_inverse,
    truncated_svd,
)
from .transformer import model_forward


@dataclass
class LiftPair:
    """Restriction lam (k x D) and lift u (D x k) with u @ lam @ h ~ h.

    kind "projection": u has orthonormal columns and lam = u.T.
    kind "row-selection": lam rows are 1-hot (selected coordinates,
    recorded in ``indices``) and u carries reconstruction coefficients.
    """

    u: np.ndarray
    lam: np.ndarray
    kind: str
    indices: np.ndarray | None = None


def lowrank_lift(h, d: int, mode: str = "projection") -> tuple[LiftPair, np.ndarray]:
    """Width-d lift of the column space of ``h``; returns the pair and
    the rank-d surrogate it was built from.

    For projection mode the reconstruction u @ (lam @ h) is the
    orthogonal projection onto the top-d left singular subspace, so
    each column lands at least as close to its original as the
    surrogate column does.
    """
    a = as_matrix(h)
    dim, n = a.shape
    if not (1 <= d <= min(dim, n)):
        raise ValidationError(f"lowrank_lift: d={d} outside [1, {min(dim, n)}]")
    res = truncated_svd(a, d)
    surrogate = res.matrix()
    if mode == "projection":
        u = res.u
        return LiftPair(u=u, lam=u.T.copy(), kind="projection"), surrogate
    if mode == "row-selection":
        idx, coeffs = pivoted_row_basis(surrogate)
        lam = np.zeros((idx.shape[0], dim))
        lam[np.arange(idx.shape[0]), idx] = 1.0
        return (
            LiftPair(u=coeffs, lam=lam, kind="row-selection", indices=idx),
            surrogate,
        )
    raise ValidationError(f"lowrank_lift: unknown mode {mode!r}")


def _ortho_lift(h: np.ndarray, d: int) -> np.ndarray:
    # Top-min(d, shape) left singular basis, zero-padded to d columns.
    # The zero columns keep widths uniform; they contribute nothing to
    # u @ u.T, so reconstruction is unaffected.
    k = min(d, h.shape[0], h.shape[1])
    u = truncated_svd(h, k).u
    if k < d:
        u = np.hstack([u, np.zeros((h.shape[0], d - k))])
    return u


def _selection_lift(h: np.ndarray, d: int, rank_tol: float) -> tuple[np.ndarray, np.ndarray]:
    # Row-selection lift padded to exactly d rows: when fewer than d
    # pivots are needed, the first pivot is repeated with zero
    # reconstruction coefficients (still 1-hot, still consistent).
    idx, coeffs = pivoted_row_basis(h, rank_tol)
    if idx.shape[0] > d:
        raise ValidationError(
            f"selection lift: needed {idx.shape[0]} pivots with only d={d} available"
        )
    if idx.shape[0] < d:
        pad = d - idx.shape[0]
        idx = np.concatenate([idx, np.full(pad, idx[0], dtype=np.intp)])
        coeffs = np.hstack([coeffs, np.zeros((coeffs.shape[0], pad))])
    return idx, coeffs


def _fold(w: np.ndarray, fold: np.ndarray | None) -> np.ndarray:
    return w if fold is None else w @ fold


def exact_compress(
    model: Model,
    x,
    graph: AttentionGraph,
    d: int,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> CompressedModel:
    """Width-d network with identical outputs, assuming exact low rank.

    Requires the features and every layer's post-activation matrix to
    have numerical rank at most d; violations name the offending
    matrix. The returned model carries the output lift ``u_out``;
    u_out @ compressed_output reproduces the reference output up to
    rounding, and the attention weights agree edge for edge.
    """
    x = as_matrix(x, "features")
    width = model.width
    if not (1 <= d <= width):
        raise ValidationError(f"exact_compress: d={d} outside [1, {width}]")
    r = numerical_rank(x, rank_tol)
    if r > d:
        raise ValidationError(f"exact_compress: features have rank {r} > d={d}")
    trace = model_forward(model, x, graph)
    for ell, t in enumerate(trace.layers):
        r = numerical_rank(t.activated, rank_tol)
        if r > d:
            raise ValidationError(
                f"exact_compress: layer {ell} activations have rank {r} > d={d}"
            )

    u = _ortho_lift(x, d)
    fold = u.T.copy()
    layers = []
    for ell, (lw, t) in enumerate(zip(model.layers, trace.layers)):
        entry_fold = fold if ell == 0 else None
        w_q_hat = fold if ell == 0 else np.eye(d)
        w_k_hat = _fold(u.T @ lw.w_q.T @ lw.w_k @ u, entry_fold)
        u_v = _ortho_lift(t.v, d)
        w_v_hat = _fold(u_v.T @ lw.w_v @ u, entry_fold)
        sel, u_sigma = _selection_lift(t.activated, d, rank_tol)
        w_1_hat = (lw.w_1 @ u_v)[sel, :]
        b_1_hat = lw.b_1[sel].copy() if lw.b_1 is not None else None
        u_next = _ortho_lift(t.h_out, d)
        w_2_hat = u_next.T @ lw.w_2 @ u_sigma
        layers.append(
            LayerWeights(
                w_v=w_v_hat, w_q=w_q_hat, w_k=w_k_hat, w_1=w_1_hat, w_2=w_2_hat, b_1=b_1_hat
            )
        )
        u = u_next
    return CompressedModel(
        d_in=model.d_in,
        width=width,
        n_layers=model.n_layers,
        layers=layers,
        use_sqrt_d=model.use_sqrt_d,
        activation=model.activation,
        d=d,
        u_out=u,
    )


@dataclass
class ApproxSurrogates:
    """Rank-d surrogates the approximate construction projected onto."""

    x_bar: np.ndarray
    activated_bars: list[np.ndarray]


def approx_compress(
    model: Model,
    x,
    graph: AttentionGraph,
    d: int,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> tuple[CompressedModel, ApproxSurrogates]:
    """Width-d network tracking the reference to within the surrogate
    error of its trace.

    The attention and value maps work in projected coordinates, while
    the feed-forward block keeps its D-dimensional activation: W_1
    gains d columns (compressed in), W_2 gains d rows (compressed
    out), and the elementwise ReLU itself is untouched. Projections
    come from the top singular bases of the features and of each
    layer's post-activation trace matrix, so when those are exactly
    rank d this degenerates to the exact construction.
    """
    x = as_matrix(x, "features")
    width = model.width
    if not (1 <= d <= width):
        raise ValidationError(f"approx_compress: d={d} outside [1, {width}]")
    trace = model_forward(model, x, graph)

    u = _ortho_lift(x, d)
    x_bar = u @ (u.T @ x)
    fold = u.T.copy()
    activated_bars = []
    layers = []
    for ell, (lw, t) in enumerate(zip(model.layers, trace.layers)):
        entry_fold = fold if ell == 0 else None
        w_q_hat = fold if ell == 0 else np.eye(d)
        w_k_hat = _fold(u.T @ lw.w_q.T @ lw.w_k @ u, entry_fold)
        u_v = _ortho_lift(lw.w_v @ u, d)
        w_v_hat = _fold(u_v.T @ lw.w_v @ u, entry_fold)
        w_1_hat = lw.w_1 @ u_v
        b_1_hat = lw.b_1.copy() if lw.b_1 is not None else None
        u_34 = _ortho_lift(t.activated, d)
        activated_bars.append(u_34 @ (u_34.T @ t.activated))
        u_next = _ortho_lift(lw.w_2 @ u_34, d)
        w_2_hat = u_next.T @ lw.w_2
        layers.append(
            LayerWeights(
                w_v=w_v_hat, w_q=w_q_hat, w_k=w_k_hat, w_1=w_1_hat, w_2=w_2_hat, b_1=b_1_hat
            )
        )
        u = u_next
    compressed = CompressedModel(
        d_in=model.d_in,
        width=width,
        n_layers=model.n_layers,
        layers=layers,
        use_sqrt_d=model.use_sqrt_d,
        activation=model.activation,
        d=d,
        u_out=u,
    )
    return compressed, ApproxSurrogates(x_bar=x_bar, activated_bars=activated_bars)


def leverage_scores(a, rank_tol_rel: float = 1e-12) -> np.ndarray:
    """Statistical leverage of each row of ``a``.

    Equal to the squared row norms of the left singular basis (and to
    a_i (A^T A)^+ a_i^T); the scores sum to the numerical rank.
    """
    m = as_matrix(a)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    keep = s > rank_tol_rel * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    if not np.any(keep):
        raise ValidationError("leverage_scores: zero matrix has no leverage structure")
    ub = u[:, keep]
    return np.einsum("ij,ij->i", ub, ub)


@dataclass
class LeverageSample:
    """Weighted row selection S (k x D) and its lift U = A (S A)^+.

    Rows are drawn i.i.d. with replacement proportionally to leverage;
    duplicates stay as separate rows, each carrying its own weight
    1 / sqrt(k p_i), which matches the i.i.d. analysis the sampling
    comes from.
    """

    indices: np.ndarray
    weights: np.ndarray
    s: np.ndarray
    u: np.ndarray
    scores: np.ndarray
    probabilities: np.ndarray


def leverage_select(a, k: int, seed: int) -> LeverageSample:
    m = as_matrix(a)
    if k < 1:
        raise ValidationError(f"leverage_select: k={k} must be >= 1")
    scores = leverage_scores(m)
    p = scores / scores.sum()
    rng = np.random.default_rng(seed)
    idx = rng.choice(m.shape[0], size=k, replace=True, p=p)
    weights = 1.0 / np.sqrt(k * p[idx])
    s = np.zeros((k, m.shape[0]))
    s[np.arange(k), idx] = weights
    u = m @ pseudo_inverse(s @ m)
    return LeverageSample(
        indices=idx, weights=weights, s=s, u=u, scores=scores, probabilities=p
    )


@dataclass
class CoverageReport:
    """Which embedding columns the sampled coordinates reconstruct.

    ``floor`` is the per-column rounding allowance added to the
    threshold, so the eps=0 exact case is not failed by float noise.
    """

    fraction: float
    errors: np.ndarray
    threshold: float
    k: int
    d: int
    sample: LeverageSample
    floor: np.ndarray | None = None

    def covered(self) -> np.ndarray:
        slack = 0.0 if self.floor is None else self.floor
        return self.errors <= self.threshold + slack

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "threshold": self.threshold,
            "k": self.k,
            "d": self.d,
            "errors": [float(v) for v in self.errors],
            "covered": [bool(v) for v in self.covered()],
            "indices": [int(i) for i in self.sample.indices],
            "weights": [float(w) for w in self.sample.weights],
        }


def leverage_coverage(
    h, d: int, k: int, eps: float, seed: int, threshold_factor: float = 10.0
) -> CoverageReport:
    """Sample k coordinates by leverage of the rank-d factor of ``h``
    and report the fraction of columns reconstructed to within
    threshold_factor * eps."""
    m = as_matrix(h)
    if not (1 <= d <= min(m.shape)):
        raise ValidationError(f"leverage_coverage: d={d} outside [1, {min(m.shape)}]")
    if eps < 0:
        raise ValidationError(f"leverage_coverage: eps={eps} must be >= 0")
    basis = truncated_svd(m, d).u
    sample = leverage_select(basis, k, seed)
    reconstructed = sample.u @ (sample.s @ m)
    errors = np.linalg.norm(reconstructed - m, axis=0)
    threshold = threshold_factor * eps
    floor = 1e-12 * (1.0 + np.linalg.norm(m, axis=0))
    report = CoverageReport(
        fraction=0.0,
        errors=errors,
        threshold=threshold,
        k=k,
        d=d,
        sample=sample,
        floor=floor,
    )
    report.fraction = float(np.mean(report.covered()))
    return report
