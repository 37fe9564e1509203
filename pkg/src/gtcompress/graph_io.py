"""Graph, feature, and model file handling.

File formats are deliberately plain:

* graph: UTF-8 text, one ``i j`` directed edge per line, 0-indexed,
  ``#`` starts a comment. Edge (i, j) means node i attends to node j.
* features: delimited numeric text, one row per node, one column per
  feature. Whitespace or commas both work. Stored transposed
  internally, so each column of the in-memory array is one node.
* model: JSON, schema version 1. Matrices are row-major nested lists;
  floats use Python's shortest round-trip decimal form, which restores
  them bit-exactly on load.

Loaders validate on entry and raise ValidationError with the offending
line or layer named. Models get an audit block (operator norm of every
weight matrix) attached at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, operator_norm

MODEL_SCHEMA_VERSION = 1

_WEIGHT_KEYS = ("W_V", "W_Q", "W_K", "W_1", "W_2")


class AttentionGraph:
    """Directed graph in CSR form with a canonical edge order.

    Edges are sorted by (source, target); all per-edge arrays elsewhere
    in the package align with that order. Construction enforces the
    invariants the attention kernel needs: indices in range, no
    duplicate directed edges, and at least one out-edge per node
    (callers that want the self-loop repair use ``ensure_self_loops``).
    """

    def __init__(self, n: int, edges):
        if n < 1:
            raise ValidationError(f"graph: need at least one node, got n={n}")
        e = np.asarray(edges, dtype=np.intp)
        if e.size == 0:
            e = e.reshape(0, 2)
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValidationError(f"graph: edge array must be (m, 2), got {e.shape}")
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValidationError("graph: edge endpoint out of range [0, n)")
        order = np.lexsort((e[:, 1], e[:, 0]))
        e = e[order]
        if e.shape[0] > 1:
            dup = np.all(e[1:] == e[:-1], axis=1)
            if np.any(dup):
                i, j = e[1:][dup][0]
                raise ValidationError(f"graph: duplicate directed edge ({i}, {j})")
        counts = np.bincount(e[:, 0], minlength=n)
        if np.any(counts == 0):
            missing = int(np.argmin(counts))
            raise ValidationError(
                f"graph: node {missing} has no out-edge; attention needs a nonempty "
                "neighborhood (ensure_self_loops repairs this)"
            )
        self.n = int(n)
        self.src = np.ascontiguousarray(e[:, 0])
        self.targets = np.ascontiguousarray(e[:, 1])
        self.indptr = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(counts, out=self.indptr[1:])
        self.added_self_loops: tuple[int, ...] = ()

    @property
    def m(self) -> int:
        return int(self.targets.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        return self.targets[self.indptr[i] : self.indptr[i + 1]]

    def edge_list(self) -> np.ndarray:
        return np.stack([self.src, self.targets], axis=1)


def ensure_self_loops(n: int, edges: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    """Append (i, i) for every node without an out-edge.

    Returns the augmented edge array and the tuple of repaired nodes.
    """
    e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    have = np.zeros(n, dtype=bool)
    if e.size:
        valid = (e[:, 0] >= 0) & (e[:, 0] < n)
        have[e[valid, 0]] = True
    missing = np.flatnonzero(~have)
    if missing.size:
        loops = np.stack([missing, missing], axis=1)
        e = np.concatenate([e, loops], axis=0) if e.size else loops
    return e, tuple(int(i) for i in missing)


def full_graph(n: int) -> AttentionGraph:
    """Complete directed graph on n nodes, self-loops included (m = n^2)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return AttentionGraph(n, np.stack([i.ravel(), j.ravel()], axis=1))


def load_graph(path, n: int | None = None) -> AttentionGraph:
    """Parse an edge-list file. ``n`` defaults to max index + 1.

    Nodes in [0, n) without any out-edge get a self-loop; the repaired
    node ids are recorded on the returned graph.
    """
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}: line {lineno}: expected 'i j', got {raw!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: non-integer endpoint in {raw!r}"
                ) from None
            if i < 0 or j < 0:
                raise ValidationError(f"{path}: line {lineno}: negative node index")
            edges.append((i, j))
    if not edges and n is None:
        raise ValidationError(f"{path}: no edges and no node count given")
    e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    count = int(e.max()) + 1 if e.size else 0
    if n is None:
        n = count
    elif count > n:
        raise ValidationError(f"{path}: edge endpoint {count - 1} exceeds n={n}")
    e, repaired = ensure_self_loops(n, e)
    g = AttentionGraph(n, e)
    g.added_self_loops = repaired
    return g


def save_graph(graph: AttentionGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# directed edge list, {graph.n} nodes, {graph.m} edges\n")
        for i, j in zip(graph.src, graph.targets):
            fh.write(f"{i} {j}\n")


def load_features(path) -> np.ndarray:
    """Read a node-feature table; returns a (d_in, n) array.

    Rows are nodes in the file, so the result is the transpose of what
    was written. Ragged rows are rejected with their row number.
    """
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValidationError(
                    f"{path}: row {lineno}: non-numeric value"
                ) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValidationError(
                    f"{path}: row {lineno}: expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    x = np.asarray(rows, dtype=np.float64).T
    return as_matrix(x, f"{path}")


def save_features(x, path) -> None:
    """Write a (d_in, n) feature array as n rows of d_in columns."""
    a = as_matrix(x, "features")
    with open(path, "w", encoding="utf-8") as fh:
        for col in a.T:
            fh.write(" ".join(repr(float(v)) for v in col) + "\n")


@dataclass
class LayerWeights:
    """One transformer layer: attention maps, then the two-layer FFN."""

    w_v: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_1: np.ndarray
    w_2: np.ndarray
    b_1: np.ndarray | None = None

    def named(self):
        yield "W_V", self.w_v
        yield "W_Q", self.w_q
        yield "W_K", self.w_k
        yield "W_1", self.w_1
        yield "W_2", self.w_2


@dataclass
class Model:
    """Reference transformer: L layers of width D over d_in inputs."""

    d_in: int
    width: int
    n_layers: int
    layers: list[LayerWeights]
    use_sqrt_d: bool = False
    activation: str = "relu"
    audit: dict | None = field(default=None, repr=False)


@dataclass
class CompressedModel(Model):
    """Compressed variant: internal width d, optional output lift.

    ``u_out`` (width x d) maps compressed outputs back to the reference
    space; methods that keep the original output width leave it None.
    """

    d: int = 0
    u_out: np.ndarray | None = None


def validate_model(model: Model, strict_reference: bool = False) -> None:
    """Check the shape chain of a model's layers.

    Generic rule: within a layer, W_Q/W_K share row count, the three
    attention maps share column count (the layer's input width), W_1
    consumes W_V rows, W_2 consumes W_1 rows, and the bias matches W_1
    rows. Layer 0 consumes d_in. With ``strict_reference`` every
    matrix must additionally be square of side ``width`` (d_in for the
    layer-0 column counts).
    """
    if model.activation != "relu":
        raise ValidationError(f"model: unsupported activation {model.activation!r}")
    if model.n_layers != len(model.layers):
        raise ValidationError(
            f"model: L={model.n_layers} but {len(model.layers)} layer blocks"
        )
    width_in = model.d_in
    for ell, lw in enumerate(model.layers):
        for name, w in lw.named():
            as_matrix(w, f"layer {ell} {name}")
        if lw.w_q.shape[0] != lw.w_k.shape[0]:
            raise ValidationError(f"layer {ell}: W_Q rows {lw.w_q.shape[0]} != W_K rows {lw.w_k.shape[0]}")
        for name, w in (("W_V", lw.w_v), ("W_Q", lw.w_q), ("W_K", lw.w_k)):
            if w.shape[1] != width_in:
                raise ValidationError(
                    f"layer {ell}: {name} has {w.shape[1]} columns, input width is {width_in}"
                )
        if lw.w_1.shape[1] != lw.w_v.shape[0]:
            raise ValidationError(
                f"layer {ell}: W_1 columns {lw.w_1.shape[1]} != W_V rows {lw.w_v.shape[0]}"
            )
        if lw.w_2.shape[1] != lw.w_1.shape[0]:
            raise ValidationError(
                f"layer {ell}: W_2 columns {lw.w_2.shape[1]} != W_1 rows {lw.w_1.shape[0]}"
            )
        if lw.b_1 is not None and lw.b_1.shape != (lw.w_1.shape[0],):
            raise ValidationError(
                f"layer {ell}: b_1 shape {lw.b_1.shape} != ({lw.w_1.shape[0]},)"
            )
        if strict_reference:
            d = model.width
            want_cols = model.d_in if ell == 0 else d
            for name, w in lw.named():
                want = (d, want_cols) if name in ("W_V", "W_Q", "W_K") else (d, d)
                if w.shape != want:
                    raise ValidationError(
                        f"layer {ell}: {name} shape {w.shape}, reference expects {want}"
                    )
        width_in = lw.w_2.shape[0]


def _matrix_to_lists(w: np.ndarray):
    return [[float(v) for v in row] for row in w]


def _audit_model(model: Model) -> dict:
    per_layer = []
    for lw in model.layers:
        per_layer.append({name: operator_norm(w) for name, w in lw.named()})
    return {"layers": per_layer}


def save_model(model: Model, path) -> None:
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "d_in": model.d_in,
        "D": model.width,
        "L": model.n_layers,
        "use_sqrt_d": model.use_sqrt_d,
        "activation": model.activation,
        "layers": [],
    }
    for lw in model.layers:
        block = {name: _matrix_to_lists(w) for name, w in lw.named()}
        if lw.b_1 is not None:
            block["b_1"] = [float(v) for v in lw.b_1]
        doc["layers"].append(block)
    if isinstance(model, CompressedModel):
        doc["d"] = model.d
        if model.u_out is not None:
            doc["U_out"] = _matrix_to_lists(model.u_out)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_model(path) -> Model:
    """Load a model file; returns CompressedModel when a width ``d`` is
    recorded. Attaches the operator-norm audit block."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ValidationError(
            f"{path}: unknown model schema version {doc.get('version')!r}"
        )
    for key in ("d_in", "D", "L", "layers"):
        if key not in doc:
            raise ValidationError(f"{path}: missing key {key!r}")
    layers = []
    for ell, block in enumerate(doc["layers"]):
        for key in _WEIGHT_KEYS:
            if key not in block:
                raise ValidationError(f"{path}: layer {ell} missing {key!r}")
        b_1 = None
        if block.get("b_1") is not None:
            b_1 = np.asarray(block["b_1"], dtype=np.float64)
        layers.append(
            LayerWeights(
                w_v=as_matrix(block["W_V"], f"layer {ell} W_V"),
                w_q=as_matrix(block["W_Q"], f"layer {ell} W_Q"),
                w_k=as_matrix(block["W_K"], f"layer {ell} W_K"),
                w_1=as_matrix(block["W_1"], f"layer {ell} W_1"),
                w_2=as_matrix(block["W_2"], f"layer {ell} W_2"),
                b_1=b_1,
            )
        )
    common = dict(
        d_in=int(doc["d_in"]),
        width=int(doc["D"]),
        n_layers=int(doc["L"]),
        layers=layers,
        use_sqrt_d=bool(doc.get("use_sqrt_d", False)),
        activation=doc.get("activation", "relu"),
    )
    if "d" in doc:
        u_out = None
        if doc.get("U_out") is not None:
            u_out = as_matrix(doc["U_out"], "U_out")
        model: Model = CompressedModel(**common, d=int(doc["d"]), u_out=u_out)
        validate_model(model)
    else:
        model = Model(**common)
        validate_model(model, strict_reference=True)
    model.audit = _audit_model(model)
    return model
