"""Cluster-indicator compression of the feed-forward blocks.

When the pooled embeddings of every layer concentrate around a few
well-separated centers, the feed-forward block only ever sees (nearly)
d distinct inputs. The compressed network exploits that: its first
feed-forward layer turns the pooled embedding into a near-one-hot
cluster indicator (row a is 4 * c_a^T / ||c_a||^2 with bias -3, which
maps same-cluster inputs near 1 and different-cluster inputs below 0),
and its second layer replays the reference network's response to each
center through a width-d lift.

Attention survives compression because only dot products enter the
softmax: query/key maps are rebuilt from the layer-input lift, and the
value map is an exact Gram factor of the lifted value map, so pooled
dot products track the reference ones. The entry layer gets its
distance-preserving map either from a Johnson-Lindenstrauss sketch or
from a low-rank projection of the features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ValidationError
from .graph_io import AttentionGraph, CompressedModel, LayerWeights, Model
from .jlt import DEFAULT_JL_CONSTANT, sample_jl
from .linalg import as_matrix, truncated_svd
from .lowrank import _ortho_lift
from .transformer import ForwardTrace, model_forward

ENTRY_MODES = ("jl", "lowrank")


@dataclass
class ClusterStructure:
    """k-means summary of one layer's pooled embeddings.

    ``eps_cl`` is the worst relative member-to-center distance
    max_i ||h_i - c_a(i)|| / ||c_a(i)||; ``rel_dists`` keeps the
    per-node values for reporting. Representatives are the member
    closest to each center (lowest index on ties).
    """

    centers: np.ndarray
    assignments: np.ndarray
    representatives: np.ndarray
    rel_dists: np.ndarray
    gamma_min: float
    gamma_max: float
    max_pairwise_dot: float
    eps_cl: float

    @property
    def k(self) -> int:
        return self.centers.shape[1]


def _lloyd_once(pts, k, rng, iters):
    # Seeding: first center uniform, then proportional to squared
    # distance from the chosen set (k-means++). Duplicated points get
    # zero mass once their twin is picked.
    n = pts.shape[0]
    centers = [pts[rng.integers(n)]]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            break
        centers.append(pts[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, np.sum((pts - centers[-1]) ** 2, axis=1))
    c = np.array(centers)

    assign = np.zeros(n, dtype=np.intp)
    for _ in range(iters):
        d2all = ((pts[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2all, axis=1)
        live = np.unique(new_assign)
        c = np.stack([pts[new_assign == a].mean(axis=0) for a in live])
        remap = np.zeros(int(live.max()) + 1, dtype=np.intp)
        remap[live] = np.arange(live.shape[0])
        new_assign = remap[new_assign]
        if new_assign.shape == assign.shape and np.array_equal(new_assign, assign):
            break
        assign = new_assign
    inertia = float(
        np.sum((pts - c[assign]) ** 2)
    )
    return c, assign, inertia


def fit_clusters(
    points, k: int, seed: int, iters: int = 100, n_init: int = 8
) -> ClusterStructure:
    """Lloyd's k-means with greedy-distance seeding on the columns of
    ``points`` (D x n), restarted ``n_init`` times keeping the lowest
    inertia. Deterministic for fixed seed; empty clusters are dropped,
    so the result may have fewer than k centers."""
    pts = as_matrix(points).T
    n = pts.shape[0]
    if not (1 <= k <= n):
        raise ValidationError(f"fit_clusters: k={k} outside [1, {n}]")
    if n_init < 1:
        raise ValidationError(f"fit_clusters: n_init={n_init} must be >= 1")
    rng = np.random.default_rng(seed)
    c, assign, best = None, None, math.inf
    for _ in range(n_init):
        ci, ai, inertia = _lloyd_once(pts, k, rng, iters)
        if inertia < best:
            c, assign, best = ci, ai, inertia
        if best == 0.0:
            break

    k_final = c.shape[0]
    centers_cols = c.T
    norms = np.linalg.norm(centers_cols, axis=0)
    reps = np.empty(k_final, dtype=np.intp)
    rel = np.empty(n)
    for a in range(k_final):
        members = np.flatnonzero(assign == a)
        dist = np.linalg.norm(pts[members] - c[a], axis=1)
        reps[a] = members[int(np.argmin(dist))]
        rel[members] = dist / norms[a] if norms[a] > 0 else np.inf
    dots = centers_cols.T @ centers_cols
    np.fill_diagonal(dots, -np.inf)
    return ClusterStructure(
        centers=centers_cols,
        assignments=assign,
        representatives=reps,
        rel_dists=rel,
        gamma_min=float(norms.min()),
        gamma_max=float(norms.max()),
        max_pairwise_dot=float(dots.max()) if k_final > 1 else -math.inf,
        eps_cl=float(rel.max()),
    )


@dataclass
class SeparationReport:
    ok: bool
    eps: float
    gamma_min: float
    gamma_max: float
    max_pairwise_dot: float
    eps_cl: float
    bad_pairs: list = field(default_factory=list)
    bad_nodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "eps": self.eps,
            "gamma_min": self.gamma_min,
            "gamma_max": self.gamma_max,
            "max_pairwise_dot": self.max_pairwise_dot,
            "eps_cl": self.eps_cl,
            "bad_pairs": [[int(a), int(b), float(v)] for a, b, v in self.bad_pairs],
            "bad_nodes": [[int(i), float(v)] for i, v in self.bad_nodes],
        }


def validate_separation(
    structure: ClusterStructure, eps: float, slack: float = 1e-12
) -> SeparationReport:
    """Check the three conditions the indicator construction needs:
    positive center norms, pairwise center dots below gamma_min^2 / 2
    (signed, so antipodal centers pass this one), and every member
    within eps of its center relative to the center norm. Violations
    are listed by pair / node."""
    if eps < 0:
        raise ValidationError(f"validate_separation: eps={eps} must be >= 0")
    c = structure.centers
    k = structure.k
    bad_pairs = []
    limit = structure.gamma_min**2 / 2.0
    for a in range(k):
        for b in range(a + 1, k):
            dot = float(c[:, a] @ c[:, b])
            if dot >= limit:
                bad_pairs.append((a, b, dot))
    budget = eps + slack
    bad_nodes = [
        (int(i), float(structure.rel_dists[i]))
        for i in np.flatnonzero(structure.rel_dists > budget)
    ]
    ok = structure.gamma_min > 0 and not bad_pairs and not bad_nodes
    return SeparationReport(
        ok=ok,
        eps=eps,
        gamma_min=structure.gamma_min,
        gamma_max=structure.gamma_max,
        max_pairwise_dot=structure.max_pairwise_dot,
        eps_cl=structure.eps_cl,
        bad_pairs=bad_pairs,
        bad_nodes=bad_nodes,
    )


def _gram_factor(g: np.ndarray) -> np.ndarray:
    # Square factor r with r.T @ r == g.T @ g, via reduced QR. Using r
    # as the compressed value map reproduces the dot products of the
    # lifted value map g exactly, which is what the pooled-dot analysis
    # needs; g itself is not square so it cannot be the weight.
    _, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return signs[:, None] * r


@dataclass
class LayerClusterReport:
    structure: ClusterStructure
    separation: SeparationReport
    onehot_max_off: float
    onehot_on_lo: float
    onehot_on_hi: float
    pool_check: dict


@dataclass
class ClusterReport:
    entry: str
    eps: float
    layers: list[LayerClusterReport]

    def to_dict(self) -> dict:
        return {
            "entry": self.entry,
            "eps": self.eps,
            "layers": [
                {
                    "clusters": lr.structure.k,
                    "gamma_min": lr.structure.gamma_min,
                    "gamma_max": lr.structure.gamma_max,
                    "eps_cl": lr.structure.eps_cl,
                    "separation": lr.separation.to_dict(),
                    "onehot_max_off": lr.onehot_max_off,
                    "onehot_on_lo": lr.onehot_on_lo,
                    "onehot_on_hi": lr.onehot_on_hi,
                    "pool_check": lr.pool_check,
                }
                for lr in self.layers
            ],
        }


def pool_closeness_check(
    ref_v: np.ndarray,
    ref_att: np.ndarray,
    ref_pooled: np.ndarray,
    comp_v: np.ndarray,
    comp_att: np.ndarray,
    comp_pooled: np.ndarray,
    alpha: float,
) -> dict:
    """Certify pooled dot products from the measured premises.

    Measures the worst attention log-ratio and the worst value-dot
    deviation, converts them to an effective eps via the premise scales
    (ratio within exp(+-4 alpha eps), value dots within alpha eps), and
    checks the pooled-dot deviation against t * eps with
    t = 8 alpha^2 + alpha + 8 alpha^2 eps. The bound is only meaningful
    in the small-distortion regime (8 alpha eps <= 1); outside it the
    check reports the numbers without asserting.
    """
    vv_ref = ref_v.T @ ref_v
    vv_comp = comp_v.T @ comp_v
    vdot_dev = float(np.max(np.abs(vv_ref - vv_comp)))
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log(ref_att / comp_att)
    lr = np.where((ref_att == 0.0) & (comp_att == 0.0), 0.0, lr)
    ratio_dev = float(np.max(np.abs(lr)))
    pooled_dev = float(np.max(np.abs(ref_pooled.T @ ref_pooled - comp_pooled.T @ comp_pooled)))
    # The norm scale entering the bound: audited alpha or the measured
    # value dots, whichever is larger, so the premise inversion is safe.
    a_eff = max(alpha, float(np.max(np.abs(vv_ref))), float(np.max(np.abs(vv_comp))))
    eps_eff = max(ratio_dev / (4.0 * a_eff), vdot_dev / a_eff)
    t = 8.0 * a_eff**2 + a_eff + 8.0 * a_eff**2 * eps_eff
    bound = t * eps_eff
    in_regime = 8.0 * a_eff * eps_eff <= 1.0
    ok = (pooled_dev <= bound + 1e-9 * (1.0 + bound)) if in_regime else True
    return {
        "alpha": a_eff,
        "eps_eff": eps_eff,
        "t": t,
        "pooled_dot_dev": pooled_dev,
        "bound": bound,
        "ratio_dev": ratio_dev,
        "vdot_dev": vdot_dev,
        "in_regime": in_regime,
        "ok": ok,
    }


def cluster_pair_bounds(structure: ClusterStructure, pooled: np.ndarray) -> dict:
    """Measured pairwise dot bounds implied by a validated structure.

    Same-cluster pairs: h_i . h_j / ||c_a||^2 within 1 +- 3 eps_cl.
    Cross-cluster pairs: h_i . h_j / (||c_a|| ||c_b||) at most
    0.5 + 3 eps_cl (gamma_max / gamma_min)^2.
    """
    eps = structure.eps_cl
    c = structure.centers
    norms = np.linalg.norm(c, axis=0)
    gram = pooled.T @ pooled
    n = pooled.shape[1]
    a_of = structure.assignments
    same_lo, same_hi = math.inf, -math.inf
    cross_hi = -math.inf
    for i in range(n):
        for j in range(i + 1, n):
            if a_of[i] == a_of[j]:
                r = gram[i, j] / norms[a_of[i]] ** 2
                same_lo = min(same_lo, r)
                same_hi = max(same_hi, r)
            else:
                r = gram[i, j] / (norms[a_of[i]] * norms[a_of[j]])
                cross_hi = max(cross_hi, r)
    ratio = (structure.gamma_max / structure.gamma_min) ** 2
    return {
        "same_lo": same_lo,
        "same_hi": same_hi,
        "same_band": 3.0 * eps,
        "cross_hi": cross_hi,
        "cross_limit": 0.5 + 3.0 * eps * ratio,
    }


def onehot_check(activated: np.ndarray, structure: ClusterStructure) -> dict:
    """Indicator quality of one compressed layer's ReLU output.

    Returns the largest off-cluster coordinate (expected exactly 0),
    the on-cluster coordinate band, and the count of strictly positive
    coordinates per node (at most 1 for a true indicator)."""
    k = structure.k
    n = activated.shape[1]
    on = activated[structure.assignments, np.arange(n)]
    mask = np.zeros_like(activated, dtype=bool)
    mask[structure.assignments, np.arange(n)] = True
    off = activated[~mask]
    return {
        "max_off": float(off.max()) if off.size else 0.0,
        "on_lo": float(on.min()),
        "on_hi": float(on.max()),
        "max_positive_coords": int(np.max(np.sum(activated > 0.0, axis=0))),
        "clusters": k,
    }


def _entry_maps(
    model: Model, x: np.ndarray, d: int, entry: str, seed: int, eps: float, jl_c: float
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Layer-0 handling: returns (u0, fold) for lowrank entry or
    (None, jl-pair) marker handled by caller. Validates the entry
    condition and names it on failure."""
    n = x.shape[1]
    if entry == "jl":
        if eps <= 0:
            raise ValidationError("cluster entry jl: eps must be > 0")
        need = jl_c * math.log(max(n, 2)) / eps**2
        if d < need:
            raise ValidationError(
                f"cluster entry jl: d={d} below c*ln(n)/eps^2 = {need:.1f}"
            )
        return None, None
    if entry == "lowrank":
        u0 = _ortho_lift(x, d)
        resid = np.linalg.norm(x - u0 @ (u0.T @ x), axis=0)
        col_norms = np.linalg.norm(x, axis=0)
        budget = eps * col_norms + 1e-12 * (1.0 + col_norms)
        bad = np.flatnonzero(resid > budget)
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"cluster entry lowrank: feature column {i} is {resid[i]:.3e} from its "
                f"rank-{d} surrogate, over budget {budget[i]:.3e}"
            )
        return u0, u0.T.copy()
    raise ValidationError(f"cluster_compress: entry must be one of {ENTRY_MODES}")


def cluster_compress(
    model: Model,
    x,
    graph: AttentionGraph,
    d: int,
    entry: str,
    seed: int,
    eps: float,
    jl_c: float = DEFAULT_JL_CONSTANT,
    kmeans_iters: int = 100,
) -> tuple[CompressedModel, ClusterReport]:
    """Width-d network built from per-layer clusters of the reference
    trace's pooled embeddings.

    Fails with the violated condition named when the entry requirement
    or any layer's separation check does not hold at the given eps.
    The report carries, per layer, the fitted structure, its
    separation check, the indicator quality of the built network, and
    the pooled-dot certification.
    """
    x = as_matrix(x, "features")
    width = model.width
    # One cluster per compressed coordinate, so d is also the k-means k
    # and cannot exceed the node count. The jl entry may expand (d is a
    # Gaussian map's row count); the lowrank entry lifts through
    # orthonormal width-d frames and needs d within the original width.
    if not (1 <= d <= graph.n):
        raise ValidationError(f"cluster_compress: d={d} outside [1, n={graph.n}]")
    if entry == "lowrank" and d > width:
        raise ValidationError(
            f"cluster_compress: lowrank entry needs d <= width, got {d} > {width}"
        )
    trace = model_forward(model, x, graph)
    scale = 1.0 / math.sqrt(width) if model.use_sqrt_d else 1.0
    alpha = float(np.max(np.linalg.norm(x, axis=0) ** 2))
    for t in trace.layers:
        alpha = max(alpha, float(np.max(np.linalg.norm(t.h_in, axis=0) ** 2)))

    u0, fold = _entry_maps(model, x, d, entry, seed, eps, jl_c)

    layers = []
    reports = []
    h_cur = x
    u_prev = u0
    for ell, (lw, t) in enumerate(zip(model.layers, trace.layers)):
        if ell == 0 and entry == "jl":
            m_qk = sample_jl(d, width, seed).m
            m_v = sample_jl(d, width, seed + 1).m
            w_q_hat = m_qk @ lw.w_q
            w_k_hat = m_qk @ lw.w_k
            w_v_hat = m_v @ lw.w_v
        else:
            entry_fold = fold if ell == 0 else None
            u = u_prev
            w_q_hat = fold if ell == 0 else np.eye(d)
            w_k_hat = u.T @ lw.w_q.T @ lw.w_k @ u
            w_v_hat = _gram_factor(lw.w_v @ u)
            if entry_fold is not None:
                w_k_hat = w_k_hat @ entry_fold
                w_v_hat = w_v_hat @ entry_fold

        q_hat = w_q_hat @ h_cur
        k_hat = w_k_hat @ h_cur
        v_hat = w_v_hat @ h_cur
        pooled_rows, att_hat = backend.edge_attention(
            np.ascontiguousarray(q_hat.T),
            np.ascontiguousarray(k_hat.T),
            np.ascontiguousarray(v_hat.T),
            graph.indptr,
            graph.targets,
            scale,
        )
        pooled_hat = pooled_rows.T

        structure = fit_clusters(t.pooled, d, seed + ell, iters=kmeans_iters)
        sep = validate_separation(structure, eps)
        if not sep.ok:
            parts = []
            if structure.gamma_min <= 0:
                parts.append("a center has zero norm")
            if sep.bad_pairs:
                a, b, v = sep.bad_pairs[0]
                parts.append(
                    f"centers ({a}, {b}) have dot {v:.3e} >= gamma_min^2/2 = "
                    f"{structure.gamma_min ** 2 / 2:.3e}"
                )
            if sep.bad_nodes:
                i, v = sep.bad_nodes[0]
                parts.append(f"node {i} is {v:.3e} from its center (eps={eps})")
            raise ValidationError(
                f"cluster_compress: layer {ell} separation failed: " + "; ".join(parts)
            )
        k_live = structure.k

        c_hat = pooled_hat[:, structure.representatives]
        c_hat_n2 = np.sum(c_hat**2, axis=0)
        if np.any(c_hat_n2 == 0.0):
            raise ValidationError(
                f"cluster_compress: layer {ell} has a zero compressed center"
            )
        w_1_hat = np.zeros((d, d))
        w_1_hat[:k_live, :] = 4.0 * c_hat.T / c_hat_n2[:, None]
        b_1_hat = np.full(d, -3.0)

        centers_pre = lw.w_1 @ structure.centers
        if lw.b_1 is not None:
            centers_pre = centers_pre + lw.b_1[:, None]
        center_images = lw.w_2 @ np.maximum(centers_pre, 0.0)
        u_next = _ortho_lift(center_images, d)
        w_2_hat = np.zeros((d, d))
        w_2_hat[:, :k_live] = u_next.T @ center_images

        activated_hat = np.maximum(w_1_hat @ pooled_hat + b_1_hat[:, None], 0.0)
        oh = onehot_check(activated_hat[:k_live, :], structure)
        pool = pool_closeness_check(
            t.v, t.att, t.pooled, v_hat, att_hat, pooled_hat, alpha
        )
        reports.append(
            LayerClusterReport(
                structure=structure,
                separation=sep,
                onehot_max_off=oh["max_off"],
                onehot_on_lo=oh["on_lo"],
                onehot_on_hi=oh["on_hi"],
                pool_check=pool,
            )
        )

        layers.append(
            LayerWeights(
                w_v=w_v_hat, w_q=w_q_hat, w_k=w_k_hat, w_1=w_1_hat, w_2=w_2_hat, b_1=b_1_hat
            )
        )
        h_cur = w_2_hat @ activated_hat
        u_prev = u_next

    compressed = CompressedModel(
        d_in=model.d_in,
        width=width,
        n_layers=model.n_layers,
        layers=layers,
        use_sqrt_d=model.use_sqrt_d,
        activation=model.activation,
        d=d,
        u_out=u_prev,
    )
    return compressed, ClusterReport(entry=entry, eps=eps, layers=reports)
