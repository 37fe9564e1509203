"""Synthetic instances, reference-vs-compressed comparison, studies.

The generators build (model, features, graph) triples whose structure
is known by construction, and they re-measure that structure before
handing it over: the returned truth block always contains measured
values, not just requested ones. Near-low-rank instances really are
within eps of a rank-d matrix column-wise, clustered instances report
the per-layer relative spread actually achieved, and the
counterexample matrix ships with its defining parameters.

Comparison runs both models on the same data and reduces the traces to
an ErrorReport: per-node output errors (after the output lift, when
the compressed model carries one) and per-layer attention ratio
spreads. Reports serialize to JSON losslessly and reproducibly (sorted
keys, shortest round-trip floats), which is what the byte-identity
guarantee of the CLI rests on.

Scaling studies fan a (sweep value, seed) grid out over a thread pool
(capped by GTC_THREADS); results are assembled in task order, so the
output does not depend on the degree of parallelism.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .cluster import cluster_compress
from .errors import ToleranceError, ValidationError
from .graph_io import AttentionGraph, CompressedModel, LayerWeights, Model
from .jlt import compress_attention_jlt
from .linalg import as_matrix, operator_norm
from .lowrank import approx_compress, exact_compress, leverage_coverage
from .transformer import audit_norms, model_forward, random_model

SYNTH_KINDS = ("generic", "near-lowrank", "clustered", "counterexample-c31")

STUDY_QUANTILES = (0.1, 0.5, 0.9)


# ---------------------------------------------------------------------------
# Synthetic instances


@dataclass
class SynthSpec:
    """Parameters for one synthetic instance.

    ``d`` is the structural parameter: the exact/near rank for
    near-lowrank instances, the cluster count for clustered ones, and
    the compression width studies sweep. ``eps`` is the per-column
    perturbation (near-lowrank) or the relative cluster spread target
    (clustered). Counterexample instances only use n and eps.
    """

    kind: str = "generic"
    n: int = 100
    d_in: int = 16
    width: int = 32
    n_layers: int = 2
    d: int = 4
    eps: float = 0.0
    seed: int = 0
    beta: float = 2.0
    alpha: float = 1.0
    avg_degree: int = 8
    use_sqrt_d: bool = False
    entry: str = "lowrank"
    k: int = 0


@dataclass
class SynthResult:
    model: Model | None
    x: np.ndarray
    graph: AttentionGraph | None
    truth: dict


def random_graph(n: int, avg_degree: int, seed: int) -> AttentionGraph:
    """Random directed graph, out-degree uniform in [1, 2*avg_degree]."""
    rng = np.random.default_rng(seed)
    hi = max(2, min(2 * avg_degree, n))
    edges = []
    for i in range(n):
        deg = int(rng.integers(1, hi + 1))
        targets = rng.choice(n, size=min(deg, n), replace=False)
        edges.extend((i, int(j)) for j in targets)
    return AttentionGraph(n, np.asarray(edges, dtype=np.intp))


def _block_graph(assign: np.ndarray, avg_degree: int, seed: int) -> AttentionGraph:
    # Every node attends only within its own cluster (self included),
    # so exact clustering survives the pooling step.
    rng = np.random.default_rng(seed)
    n = assign.shape[0]
    edges = []
    for i in range(n):
        members = np.flatnonzero(assign == assign[i])
        deg = int(rng.integers(1, min(2 * avg_degree, members.shape[0]) + 1))
        targets = rng.choice(members, size=deg, replace=False)
        edges.extend((i, int(j)) for j in targets)
    return AttentionGraph(n, np.asarray(edges, dtype=np.intp))


def _rescaled_gaussian(rng, rows, cols, beta):
    w = rng.standard_normal((rows, cols))
    return w * (beta / operator_norm(w, tol=1e-9))


def _structured_w1(rng, width: int, d: int, beta: float) -> np.ndarray:
    # Rows are positive multiples of d base rows, every base row used.
    # ReLU commutes with positive scaling, so relu(W_1 @ M) has rank at
    # most d for any M; the positive scales keep that after rescaling.
    base = rng.standard_normal((d, width))
    idx = np.concatenate([np.arange(d), rng.integers(0, d, width - d)])
    rng.shuffle(idx)
    scales = rng.uniform(0.5, 2.0, width)
    w = scales[:, None] * base[idx, :]
    return w * (beta / operator_norm(w, tol=1e-9))


def _synth_near_lowrank(spec: SynthSpec) -> SynthResult:
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2**62, size=8)
    mrng = np.random.default_rng(int(seeds[0]))
    d = spec.d
    if not (1 <= d <= min(spec.d_in, spec.width, spec.n)):
        raise ValidationError(f"synth near-lowrank: d={d} incompatible with shape")
    layers = []
    for ell in range(spec.n_layers):
        cols = spec.d_in if ell == 0 else spec.width
        layers.append(
            LayerWeights(
                w_v=_rescaled_gaussian(mrng, spec.width, cols, spec.beta),
                w_q=_rescaled_gaussian(mrng, spec.width, cols, spec.beta),
                w_k=_rescaled_gaussian(mrng, spec.width, cols, spec.beta),
                w_1=_structured_w1(mrng, spec.width, d, spec.beta),
                w_2=_rescaled_gaussian(mrng, spec.width, spec.width, spec.beta),
            )
        )
    model = Model(
        d_in=spec.d_in,
        width=spec.width,
        n_layers=spec.n_layers,
        layers=layers,
        use_sqrt_d=spec.use_sqrt_d,
    )
    frng = np.random.default_rng(int(seeds[1]))
    x0 = frng.standard_normal((spec.d_in, d)) @ frng.standard_normal((d, spec.n))
    x0 *= np.sqrt(spec.alpha) / np.linalg.norm(x0, axis=0)
    graph = random_graph(spec.n, spec.avg_degree, int(seeds[2]))
    if spec.eps > 0:
        nrng = np.random.default_rng(int(seeds[3]))
        dirs = nrng.standard_normal((spec.d_in, spec.n))
        dirs /= np.linalg.norm(dirs, axis=0)
        x = x0 + spec.eps * dirs
    else:
        x = x0
    # Measured ground truth: the rank-d certificate is x0 and the trace
    # it induces; distances are what the perturbation actually did.
    col_dist = float(np.max(np.linalg.norm(x - x0, axis=0)))
    t_ref = model_forward(model, x, graph)
    t_cert = model_forward(model, x0, graph)
    layer_dists = [
        float(np.max(np.linalg.norm(a.activated - b.activated, axis=0)))
        for a, b in zip(t_ref.layers, t_cert.layers)
    ]
    truth = {
        "kind": "near-lowrank",
        "d": d,
        "eps": spec.eps,
        "measured_col_dist": col_dist,
        "activated_col_dists": layer_dists,
    }
    return SynthResult(model=model, x=x, graph=graph, truth=truth)


def _orthonormal_frame(rng, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _clustered_model(spec: SynthSpec, mrng) -> tuple[Model, np.ndarray, np.ndarray]:
    k = spec.d
    width, d_in = spec.width, spec.d_in
    x_frame = _orthonormal_frame(mrng, d_in, k)
    perm = mrng.permutation(width)[:k]
    e_sel = np.zeros((width, k))
    e_sel[perm, np.arange(k)] = 1.0
    gamma_c = 1.0
    layers = []
    h_frame = None
    for ell in range(spec.n_layers):
        v_frame = _orthonormal_frame(mrng, width, k)
        if ell == 0:
            w_v = (gamma_c / math.sqrt(spec.alpha)) * v_frame @ x_frame.T
            cols = d_in
        else:
            w_v = gamma_c * v_frame @ h_frame.T
            cols = width
        h_frame = _orthonormal_frame(mrng, width, k)
        layers.append(
            LayerWeights(
                w_v=w_v,
                w_q=_rescaled_gaussian(mrng, width, cols, spec.beta),
                w_k=_rescaled_gaussian(mrng, width, cols, spec.beta),
                w_1=(1.0 / gamma_c) * e_sel @ v_frame.T,
                w_2=h_frame @ e_sel.T,
            )
        )
    model = Model(
        d_in=d_in,
        width=width,
        n_layers=spec.n_layers,
        layers=layers,
        use_sqrt_d=spec.use_sqrt_d,
    )
    x_centers = math.sqrt(spec.alpha) * x_frame
    return model, x_centers, perm


def _measure_cluster_spread(
    model: Model, x: np.ndarray, graph: AttentionGraph, assign: np.ndarray, centers_trace
) -> list[float]:
    trace = model_forward(model, x, graph)
    spreads = []
    for t, centers in zip(trace.layers, centers_trace):
        c = centers[:, assign]
        norms = np.linalg.norm(centers, axis=0)[assign]
        rel = np.linalg.norm(t.pooled - c, axis=0) / norms
        spreads.append(float(rel.max()))
    return spreads


def _synth_clustered(spec: SynthSpec) -> SynthResult:
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2**62, size=8)
    k = spec.d
    if not (1 <= k <= min(spec.d_in, spec.width, spec.n)):
        raise ValidationError(f"synth clustered: {k} clusters incompatible with shape")
    model, x_centers, _ = _clustered_model(spec, np.random.default_rng(int(seeds[0])))
    sizes = np.full(k, spec.n // k)
    sizes[: spec.n % k] += 1
    assign = np.repeat(np.arange(k), sizes)
    graph = _block_graph(assign, spec.avg_degree, int(seeds[1]))
    x0 = x_centers[:, assign]
    # Ideal per-layer centers: the trace of one exact representative
    # per cluster (identical members pool to exactly these columns).
    rep_idx = np.searchsorted(assign, np.arange(k))
    cert = model_forward(model, x0, graph)
    centers_trace = [t.pooled[:, rep_idx] for t in cert.layers]

    measured = [0.0] * model.n_layers
    x = x0
    if spec.eps > 0:
        if spec.eps > 0.15:
            raise ValidationError(
                f"synth clustered: eps={spec.eps} too large, supported range (0, 0.15]"
            )
        nrng = np.random.default_rng(int(seeds[2]))
        dirs = nrng.standard_normal((spec.d_in, spec.n))
        dirs /= np.linalg.norm(dirs, axis=0)
        # The feature perturbation must stay within the declared eps in
        # feature space too (rank-k entry surrogates budget residuals
        # per column at eps*norm), so calibrate downward from just
        # under that cap until the pooled spread is inside budget.
        scale = 0.85 * spec.eps * math.sqrt(spec.alpha)
        for _ in range(4):
            x = x0 + scale * dirs
            measured = _measure_cluster_spread(model, x, graph, assign, centers_trace)
            if max(measured) <= spec.eps:
                break
            scale *= 0.8
        if max(measured) > spec.eps:
            raise ValidationError(
                f"synth clustered: calibration left spread {max(measured):.3e} "
                f"over target {spec.eps}"
            )
    truth = {
        "kind": "clustered",
        "clusters": k,
        "eps_cl_target": spec.eps,
        "eps_cl_measured": measured,
        "assignments": [int(a) for a in assign],
    }
    return SynthResult(model=model, x=x, graph=graph, truth=truth)


def _synth_generic(spec: SynthSpec) -> SynthResult:
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2**62, size=4)
    model, sample = random_model(
        spec.d_in,
        spec.width,
        spec.n_layers,
        int(seeds[0]),
        target_beta=spec.beta,
        feature_alpha=spec.alpha,
        use_sqrt_d=spec.use_sqrt_d,
    )
    x = sample(spec.n, int(seeds[1]))
    graph = random_graph(spec.n, spec.avg_degree, int(seeds[2]))
    return SynthResult(
        model=model, x=x, graph=graph, truth={"kind": "generic", "beta": spec.beta}
    )


def counterexample_matrix(n: int = 64, eps: float = 0.1) -> tuple[np.ndarray, dict]:
    """Rank-1-plus-identity matrix on which row selection loses badly.

    Every column of h = ones/sqrt(n) + eps*I is within about eps of
    the all-ones rank-1 matrix, but any single-coordinate restriction
    misrepresents one column by a factor growing with sqrt(n).
    """
    if n < 2 or eps <= 0:
        raise ValidationError("counterexample_matrix: need n >= 2 and eps > 0")
    h = np.full((n, n), 1.0 / math.sqrt(n)) + eps * np.eye(n)
    truth = {"kind": "counterexample-c31", "rank": 1, "eps": eps, "n": n}
    return h, truth


def rank_noise_matrix(
    width: int, n: int, d: int, eps: float, seed: int
) -> tuple[np.ndarray, dict]:
    """Columns on a rank-d subspace plus per-column noise of norm eps."""
    rng = np.random.default_rng(seed)
    h0 = rng.standard_normal((width, d)) @ rng.standard_normal((d, n))
    h0 /= np.linalg.norm(h0, axis=0)
    if eps > 0:
        dirs = rng.standard_normal((width, n))
        dirs /= np.linalg.norm(dirs, axis=0)
        h = h0 + eps * dirs
    else:
        h = h0
    dist = float(np.max(np.linalg.norm(h - h0, axis=0)))
    return h, {"kind": "rank-noise", "d": d, "eps": eps, "measured_col_dist": dist}


def synth(spec: SynthSpec) -> SynthResult:
    """Build the instance a spec describes; deterministic in the seed."""
    if spec.kind == "generic":
        return _synth_generic(spec)
    if spec.kind == "near-lowrank":
        return _synth_near_lowrank(spec)
    if spec.kind == "clustered":
        return _synth_clustered(spec)
    if spec.kind == "counterexample-c31":
        h, truth = counterexample_matrix(spec.n, spec.eps if spec.eps > 0 else 0.1)
        return SynthResult(model=None, x=h, graph=None, truth=truth)
    raise ValidationError(f"synth: unknown kind {spec.kind!r}, expected one of {SYNTH_KINDS}")


# ---------------------------------------------------------------------------
# Comparison reports


@dataclass
class ErrorReport:
    """Reference-vs-compressed comparison, reduced to the quantities
    the guarantees talk about."""

    method: str
    params: dict
    seed: int | None
    per_node: np.ndarray
    per_layer_ratios: list[dict]
    max_node_err: float
    median_node_err: float
    max_abs_log_ratio: float
    passed: bool | None = None
    tolerances: dict | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": self.params,
            "seed": self.seed,
            "summary": {
                "max_node_err": self.max_node_err,
                "median_node_err": self.median_node_err,
                "max_abs_log_ratio": self.max_abs_log_ratio,
            },
            "per_node": [float(v) for v in self.per_node],
            "per_layer_ratios": self.per_layer_ratios,
            "passed": self.passed,
            "tolerances": self.tolerances,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ErrorReport":
        return cls(
            method=doc["method"],
            params=doc["params"],
            seed=doc["seed"],
            per_node=np.asarray(doc["per_node"], dtype=np.float64),
            per_layer_ratios=doc["per_layer_ratios"],
            max_node_err=doc["summary"]["max_node_err"],
            median_node_err=doc["summary"]["median_node_err"],
            max_abs_log_ratio=doc["summary"]["max_abs_log_ratio"],
            passed=doc.get("passed"),
            tolerances=doc.get("tolerances"),
        )


def _ratio_stats(ref_att: np.ndarray, comp_att: np.ndarray) -> tuple[float, float, float]:
    # Softmax weights are positive unless the numerator underflowed.
    # Matching underflows count as agreement; one-sided underflow is an
    # honest infinity.
    with np.errstate(divide="ignore", invalid="ignore"):
        r = ref_att / comp_att
        both_zero = (ref_att == 0.0) & (comp_att == 0.0)
        r = np.where(both_zero, 1.0, r)
        logr = np.log(r)
    return float(np.min(r)), float(np.max(r)), float(np.max(np.abs(logr)))


def compare(
    ref_model: Model,
    comp_model: Model,
    x,
    graph: AttentionGraph,
    method: str = "",
    params: dict | None = None,
    seed: int | None = None,
    tolerances: dict | None = None,
) -> ErrorReport:
    """Run both models on (x, graph) and reduce the traces.

    Compressed outputs are lifted through u_out when present; without a
    lift the output widths must already agree. Per-layer attention
    ratios compare edge for edge in the graph's canonical order.
    """
    x = as_matrix(x, "features")
    ref_trace = model_forward(ref_model, x, graph)
    comp_trace = model_forward(comp_model, x, graph)
    out_ref = ref_trace.output
    out_comp = comp_trace.output
    u_out = getattr(comp_model, "u_out", None)
    if u_out is not None:
        out_comp = u_out @ out_comp
    if out_comp.shape != out_ref.shape:
        raise ValidationError(
            f"compare: output shapes {out_ref.shape} vs {out_comp.shape} need a lift"
        )
    per_node = np.linalg.norm(out_ref - out_comp, axis=0)
    per_layer = []
    worst_log = 0.0
    for ell, (a, b) in enumerate(zip(ref_trace.layers, comp_trace.layers)):
        lo, hi, mx = _ratio_stats(a.att, b.att)
        per_layer.append(
            {"layer": ell, "min_ratio": lo, "max_ratio": hi, "max_abs_log_ratio": mx}
        )
        worst_log = max(worst_log, mx)
    report = ErrorReport(
        method=method,
        params=params or {},
        seed=seed,
        per_node=per_node,
        per_layer_ratios=per_layer,
        max_node_err=float(per_node.max()),
        median_node_err=float(np.median(per_node)),
        max_abs_log_ratio=worst_log,
    )
    if tolerances is not None:
        report.tolerances = dict(tolerances)
        summary = {
            "max_node_err": report.max_node_err,
            "median_node_err": report.median_node_err,
            "max_abs_log_ratio": report.max_abs_log_ratio,
        }
        report.passed = all(
            summary[k] <= v for k, v in tolerances.items() if k in summary and v is not None
        )
    return report


def load_tolerances(path=None) -> dict:
    """The single versioned tolerance file; package data by default."""
    if path is None:
        text = resources.files("gtcompress").joinpath("data/tolerances.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ValidationError(f"tolerances: unknown version {doc.get('version')!r}")
    return doc


# ---------------------------------------------------------------------------
# Studies


def _max_workers(n_tasks: int) -> int:
    cap = os.environ.get("GTC_THREADS")
    workers = min(n_tasks, os.cpu_count() or 1)
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise ValidationError(f"GTC_THREADS={cap!r} is not an integer") from None
    return max(workers, 1)


def run_compression(method: str, spec: SynthSpec) -> dict:
    """One (instance, compress, compare) cycle; returns the metrics."""
    if method == "leverage":
        d = spec.d
        k = spec.k if spec.k > 0 else 4 * math.ceil(d * math.log(max(d, 2)))
        h, truth = rank_noise_matrix(spec.width, spec.n, d, spec.eps, spec.seed)
        cov = leverage_coverage(h, d, k, spec.eps, spec.seed)
        return {
            "fraction_covered": cov.fraction,
            "max_err": float(cov.errors.max()),
            "k": k,
            "truth": truth,
        }
    inst = synth(spec)
    if inst.model is None:
        raise ValidationError(f"run_compression: kind {spec.kind!r} has no model")
    if method == "jlt":
        comp = compress_attention_jlt(inst.model, spec.d, spec.seed)
    elif method == "jlt-identity":
        comp = compress_attention_jlt(
            inst.model, inst.model.width, spec.seed, debug_identity=True
        )
    elif method == "exact":
        comp = exact_compress(inst.model, inst.x, inst.graph, spec.d)
    elif method == "lowrank":
        comp, _ = approx_compress(inst.model, inst.x, inst.graph, spec.d)
    elif method == "cluster":
        comp, _ = cluster_compress(
            inst.model, inst.x, inst.graph, spec.d, spec.entry, spec.seed, spec.eps
        )
    else:
        raise ValidationError(f"run_compression: unknown method {method!r}")
    report = compare(
        inst.model, comp, inst.x, inst.graph, method=method, seed=spec.seed
    )
    return {
        "max_node_err": report.max_node_err,
        "median_node_err": report.median_node_err,
        "max_abs_log_ratio": report.max_abs_log_ratio,
        "truth": inst.truth,
    }


@dataclass
class StudyResult:
    method: str
    sweep_name: str
    values: list
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "sweep": self.sweep_name,
            "values": self.values,
            "seeds": self.seeds,
            "rows": self.rows,
            "checks": self.checks,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def quantile(self, value, metric: str, q: float) -> float:
        for row in self.rows:
            if row["value"] == value:
                return float(np.quantile(np.asarray(row["metrics"][metric]), q))
        raise KeyError(value)

    def write_csv(self, path) -> None:
        metrics = sorted(self.rows[0]["metrics"]) if self.rows else []
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([self.sweep_name, "quantile", *metrics])
            for row in self.rows:
                vals = {m: np.asarray(row["metrics"][m]) for m in metrics}
                for q in STUDY_QUANTILES:
                    w.writerow(
                        [row["value"], q, *[repr(float(np.quantile(vals[m], q))) for m in metrics]]
                    )


def scaling_study(
    method: str,
    spec: SynthSpec,
    sweep_name: str,
    sweep_values,
    seeds,
    check: bool = True,
) -> StudyResult:
    """Sweep one spec field over values x seeds; aggregate per value.

    Independent (value, seed) tasks run on a thread pool capped by
    GTC_THREADS. With ``check`` the method's trend assertion runs at
    the end: jlt's median max error must be non-increasing in d, and
    lowrank's log-log error slope against eps must sit in the window
    carried by the tolerance file.
    """
    values = list(sweep_values)
    seeds = [int(s) for s in seeds]
    if not values or not seeds:
        raise ValidationError("scaling_study: empty sweep or seed list")
    if not hasattr(spec, sweep_name):
        raise ValidationError(f"scaling_study: unknown sweep field {sweep_name!r}")
    tasks = [(v, s) for v in values for s in seeds]

    def run(task):
        v, s = task
        sp = replace(spec, **{sweep_name: v, "seed": s})
        return run_compression(method, sp)

    with ThreadPoolExecutor(max_workers=_max_workers(len(tasks))) as ex:
        outcomes = list(ex.map(run, tasks))

    result = StudyResult(method=method, sweep_name=sweep_name, values=values, seeds=seeds)
    metric_names = [k for k in outcomes[0] if k != "truth" and not isinstance(outcomes[0][k], dict)]
    for i, v in enumerate(values):
        chunk = outcomes[i * len(seeds) : (i + 1) * len(seeds)]
        result.rows.append(
            {
                "value": v,
                "metrics": {m: [float(o[m]) for o in chunk] for m in metric_names},
            }
        )

    if check:
        tol = load_tolerances()["study"]
        if method == "jlt" and sweep_name == "d":
            medians = [result.quantile(v, "max_node_err", 0.5) for v in values]
            result.checks["medians"] = medians
            bad = [
                (values[i], values[i + 1])
                for i in range(len(medians) - 1)
                if medians[i + 1] > medians[i] * (1.0 + tol["jlt_monotone_slack"])
            ]
            result.checks["monotone"] = not bad
            if bad:
                raise ToleranceError(
                    f"jlt study: median max error increased across d={bad}"
                )
        if method == "lowrank" and sweep_name == "eps":
            medians = [result.quantile(v, "max_node_err", 0.5) for v in values]
            slope = float(
                np.polyfit(np.log(np.asarray(values)), np.log(np.asarray(medians)), 1)[0]
            )
            result.checks["slope"] = slope
            lo, hi = tol["lowrank_slope_window"]
            result.checks["slope_window"] = [lo, hi]
            if not (lo <= slope <= hi):
                raise ToleranceError(
                    f"lowrank study: error slope {slope:.3f} outside [{lo}, {hi}]"
                )
    return result


def norm_report(model: Model, x=None, graph: AttentionGraph | None = None) -> dict:
    """Audit wrapper returning both the JSON document and the rendered
    average +- std text block."""
    audit = audit_norms(model, x, graph)
    return {"audit": audit.to_dict(), "rendered": audit.render()}
