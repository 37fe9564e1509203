"""Command-line entry point.

Six subcommands (forward, compress, verify, norms, synth, study) wire
files to the library. Every run is replayable: stochastic methods
require an explicit seed, outputs are JSON/CSV with sorted keys and
shortest round-trip floats, so identical invocations produce
byte-identical files.

Exit codes: 0 success, 1 validation failure (bad flags, bad files,
violated preconditions), 2 tolerance failure from verify or study,
3 I/O error. Failures also emit one machine-readable JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import backend
from .cluster import cluster_compress
from .errors import GtcError, ToleranceError, ValidationError
from .graph_io import (
    load_features,
    load_graph,
    load_model,
    save_features,
    save_graph,
    save_model,
)
from .harness import (
    SynthSpec,
    compare,
    counterexample_matrix,
    load_tolerances,
    norm_report,
    scaling_study,
    synth,
)
from .jlt import DEFAULT_JL_CONSTANT, compress_attention_jlt
from .lowrank import approx_compress, exact_compress, leverage_coverage
from .transformer import model_forward

STOCHASTIC_METHODS = ("jlt", "leverage", "cluster")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; 2 means tolerance failure here, so
    # usage problems are rerouted through the validation path.
    def error(self, message):
        raise ValidationError(f"arguments: {message}")


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"arguments: bad numeric list {text!r}") from None


def _parse_seeds(text: str) -> list[int]:
    # "10" means seeds 0..9; "3,5,8" means exactly those.
    try:
        if "," in text:
            return [int(v) for v in text.split(",") if v != ""]
        return list(range(int(text)))
    except ValueError:
        raise ValidationError(f"arguments: bad seed list {text!r}") from None


def build_parser() -> _Parser:
    p = _Parser(prog="gtc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    def add_io(sp, model=True, features=True, graph=True):
        if model:
            sp.add_argument("--model", required=True, help="model JSON path")
        if features:
            sp.add_argument("--features", required=True, help="feature text file")
        if graph:
            sp.add_argument("--graph", required=True, help="edge-list text file")

    sp = sub.add_parser("forward", help="run the reference forward pass")
    add_io(sp)
    sp.add_argument("--out", required=True, help="output JSON path")

    sp = sub.add_parser("compress", help="build a compressed model")
    add_io(sp)
    sp.add_argument(
        "--method",
        required=True,
        choices=["jlt", "exact", "lowrank", "leverage", "cluster"],
    )
    sp.add_argument("--d", type=int, required=True, help="compressed width")
    sp.add_argument("--seed", type=int, help="required for stochastic methods")
    sp.add_argument("--eps", type=float, help="tolerance / noise scale")
    sp.add_argument("--k", type=int, help="leverage sample count")
    sp.add_argument("--jl-c", type=float, default=DEFAULT_JL_CONSTANT)
    sp.add_argument("--entry", choices=["jl", "lowrank"], default="lowrank")
    sp.add_argument("--identity", action="store_true", help="jlt debug identity map")
    sp.add_argument("--out", required=True, help="output JSON path")
    sp.add_argument("--report", help="side-report JSON path (cluster)")

    sp = sub.add_parser("verify", help="compare a compressed model to its reference")
    sp.add_argument("--ref", required=True, help="reference model JSON")
    sp.add_argument("--compressed", required=True, help="compressed model JSON")
    add_io(sp, model=False)
    sp.add_argument("--method", help="tolerance block name in the tolerance file")
    sp.add_argument("--tolerances", help="tolerance file (package default otherwise)")
    sp.add_argument("--max-node-err", type=float, help="override: output error bound")
    sp.add_argument("--max-log-ratio", type=float, help="override: |log ratio| bound")
    sp.add_argument("--out", required=True, help="report JSON path")

    sp = sub.add_parser("norms", help="operator/vector norm audit")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", help="optional; enables input-norm lines")
    sp.add_argument("--graph", help="required with --features")
    sp.add_argument("--out", required=True)
    sp.add_argument("--render", action="store_true", help="print the text block")

    sp = sub.add_parser("synth", help="generate a synthetic instance")
    sp.add_argument(
        "--kind",
        required=True,
        choices=["generic", "near-lowrank", "clustered", "counterexample-c31"],
    )
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--d-in", type=int, default=16)
    sp.add_argument("--width", type=int, default=32)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--d", type=int, default=4, help="rank / cluster count")
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--seed", type=int, help="generator seed (required)")
    sp.add_argument("--beta", type=float, default=2.0)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--avg-degree", type=int, default=8)
    sp.add_argument("--out-prefix", required=True, help="writes PREFIX.{model.json,features.txt,graph.txt,truth.json}")

    sp = sub.add_parser("study", help="sweep a parameter, aggregate quantiles")
    sp.add_argument("--method", required=True, choices=["jlt", "exact", "lowrank", "leverage", "cluster"])
    sp.add_argument("--sweep-d", help="comma list of compressed widths")
    sp.add_argument("--sweep-eps", help="comma list of eps values")
    sp.add_argument("--seeds", required=True, help="count or comma list")
    sp.add_argument("--kind", default=None, help="generator kind (defaulted per method)")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--d-in", type=int, default=16)
    sp.add_argument("--width", type=int, default=32)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--d", type=int, default=4)
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--k", type=int, default=0)
    sp.add_argument("--beta", type=float, default=2.0)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--avg-degree", type=int, default=8)
    sp.add_argument("--entry", choices=["jl", "lowrank"], default="lowrank")
    sp.add_argument("--no-check", action="store_true", help="skip trend assertions")
    sp.add_argument("--out-csv", required=True)
    sp.add_argument("--out-json", required=True)

    for name, sp in sub.choices.items():
        sp.add_argument("--config", help="JSON file of flag defaults (flags win)")
    return p


def _peek_config(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise ValidationError("arguments: --config needs a path")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: _Parser, argv: list[str], path: str) -> None:
    """Install config values as subcommand defaults before parsing, so
    config may satisfy required flags while explicit flags still win."""
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config: {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config: top level must be an object")
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    choices = sub_actions[0].choices
    name = argv[0] if argv and argv[0] in choices else None
    if name is None:
        raise ValidationError("config: a subcommand must come before --config")
    sp = choices[name]
    dests = {a.dest for a in sp._actions}
    mapped = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(k for k in mapped if k not in dests)
    if unknown:
        raise ValidationError(f"config: unknown keys {unknown}")
    sp.set_defaults(**mapped)
    for a in sp._actions:
        if a.required and a.dest in mapped:
            a.required = False


def _require_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        raise ValidationError(
            "arguments: --seed is required for stochastic methods (no wall-clock default)"
        )
    return args.seed


def _cmd_forward(args) -> int:
    model = load_model(args.model)
    x = load_features(args.features)
    graph = load_graph(args.graph, n=x.shape[1])
    trace = model_forward(model, x, graph)
    _write_json(
        {
            "backend": backend.backend_name(),
            "n": graph.n,
            "width": trace.output.shape[0],
            "output": [[float(v) for v in row] for row in trace.output],
        },
        args.out,
    )
    return 0


def _cmd_compress(args) -> int:
    model = load_model(args.model)
    x = load_features(args.features)
    graph = load_graph(args.graph, n=x.shape[1])
    method = args.method
    if method in STOCHASTIC_METHODS:
        _require_seed(args)
    if method == "jlt":
        comp = compress_attention_jlt(model, args.d, args.seed, debug_identity=args.identity)
    elif method == "exact":
        comp = exact_compress(model, x, graph, args.d)
    elif method == "lowrank":
        comp, _ = approx_compress(model, x, graph, args.d)
    elif method == "leverage":
        # Selection certifies coverage of the final activated matrix; it
        # reports rather than rewrites the model.
        if args.eps is None or args.k is None:
            raise ValidationError("arguments: leverage needs --eps and --k")
        trace = model_forward(model, x, graph)
        cov = leverage_coverage(
            trace.layers[-1].activated, args.d, args.k, args.eps, args.seed
        )
        _write_json(cov.to_dict(), args.out)
        return 0
    else:
        if args.eps is None:
            raise ValidationError("arguments: cluster needs --eps")
        comp, rep = cluster_compress(
            model, x, graph, args.d, args.entry, args.seed, args.eps, jl_c=args.jl_c
        )
        if args.report:
            _write_json(rep.to_dict(), args.report)
        else:
            json.dump(rep.to_dict(), sys.stdout, sort_keys=True, indent=1)
            sys.stdout.write("\n")
    save_model(comp, args.out)
    return 0


def _cmd_verify(args) -> int:
    ref = load_model(args.ref)
    comp = load_model(args.compressed)
    x = load_features(args.features)
    graph = load_graph(args.graph, n=x.shape[1])
    tol: dict = {}
    if args.method:
        table = load_tolerances(args.tolerances)["verify"]
        if args.method not in table:
            raise ValidationError(
                f"verify: no tolerance block {args.method!r}; have {sorted(table)}"
            )
        tol.update({k: v for k, v in table[args.method].items() if v is not None})
    if args.max_node_err is not None:
        tol["max_node_err"] = args.max_node_err
    if args.max_log_ratio is not None:
        tol["max_abs_log_ratio"] = args.max_log_ratio
    report = compare(
        ref,
        comp,
        x,
        graph,
        method=args.method or "",
        tolerances=tol or None,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if report.passed is False:
        raise ToleranceError(
            f"verify: max_node_err={report.max_node_err:.3e} "
            f"max_abs_log_ratio={report.max_abs_log_ratio:.3e} over {tol}"
        )
    return 0


def _cmd_norms(args) -> int:
    model = load_model(args.model)
    x = graph = None
    if args.features:
        if not args.graph:
            raise ValidationError("arguments: --features needs --graph")
        x = load_features(args.features)
        graph = load_graph(args.graph, n=x.shape[1])
    doc = norm_report(model, x, graph)
    _write_json(doc, args.out)
    if args.render:
        print(doc["rendered"])
    return 0


def _cmd_synth(args) -> int:
    _require_seed(args)
    spec = SynthSpec(
        kind=args.kind,
        n=args.n,
        d_in=args.d_in,
        width=args.width,
        n_layers=args.layers,
        d=args.d,
        eps=args.eps,
        seed=args.seed,
        beta=args.beta,
        alpha=args.alpha,
        avg_degree=args.avg_degree,
    )
    inst = synth(spec)
    prefix = args.out_prefix
    save_features(inst.x, prefix + ".features.txt")
    if inst.model is not None:
        save_model(inst.model, prefix + ".model.json")
    if inst.graph is not None:
        save_graph(inst.graph, prefix + ".graph.txt")
    _write_json(inst.truth, prefix + ".truth.json")
    return 0


_STUDY_DEFAULT_KIND = {
    "jlt": "generic",
    "exact": "near-lowrank",
    "lowrank": "near-lowrank",
    "leverage": "generic",
    "cluster": "clustered",
}


def _cmd_study(args) -> int:
    if (args.sweep_d is None) == (args.sweep_eps is None):
        raise ValidationError("arguments: exactly one of --sweep-d / --sweep-eps")
    if args.sweep_d is not None:
        sweep_name = "d"
        values = [int(v) for v in _parse_values(args.sweep_d)]
    else:
        sweep_name = "eps"
        values = _parse_values(args.sweep_eps)
    seeds = _parse_seeds(args.seeds)
    spec = SynthSpec(
        kind=args.kind or _STUDY_DEFAULT_KIND[args.method],
        n=args.n,
        d_in=args.d_in,
        width=args.width,
        n_layers=args.layers,
        d=args.d,
        eps=args.eps,
        beta=args.beta,
        alpha=args.alpha,
        avg_degree=args.avg_degree,
        entry=args.entry,
        k=args.k,
    )
    result = scaling_study(
        args.method, spec, sweep_name, values, seeds, check=not args.no_check
    )
    result.write_csv(args.out_csv)
    with open(args.out_json, "w", encoding="utf-8") as fh:
        fh.write(result.to_json())
    return 0


_COMMANDS = {
    "forward": _cmd_forward,
    "compress": _cmd_compress,
    "verify": _cmd_verify,
    "norms": _cmd_norms,
    "synth": _cmd_synth,
    "study": _cmd_study,
}


def _emit_error(exc: Exception, code: int) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    json.dump(doc, sys.stderr, sort_keys=True)
    sys.stderr.write("\n")


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        cfg_path = _peek_config(argv)
        if cfg_path is not None:
            _apply_config(parser, argv, cfg_path)
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise ValidationError("arguments: a subcommand is required")
        return _COMMANDS[args.subcommand](args)
    except ToleranceError as e:
        _emit_error(e, 2)
        return 2
    except GtcError as e:
        _emit_error(e, 1)
        return 1
    except json.JSONDecodeError as e:
        _emit_error(e, 1)
        return 1
    except OSError as e:
        _emit_error(e, 3)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
