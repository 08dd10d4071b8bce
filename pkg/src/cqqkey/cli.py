"""Command-line front end: ``cqqkey <subcommand> [options]``.

Exit codes: 0 success, 1 validation error, 2 resource cap exceeded.
Outputs go to ``--output`` (written atomically) or to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Any, Sequence

import jsonschema
import numpy as np

from .exceptions import ResourceError, ValidationError
from .source import CqChannel, load_source

EXIT_OK, EXIT_VALIDATION, EXIT_RESOURCE = 0, 1, 2
SUBCOMMANDS = ("rate", "regularity", "simulate", "counterexample", "chernov", "validate")

_NUMBER = {"type": "number"}
_ROWS = {"type": "array", "items": {"type": "object"}}
OUTPUT_SCHEMAS: dict[str, dict] = {
    "rate": {"type": "object", "required": ["value", "k", "converged", "per_group", "best_preprocessing"],
             "properties": {"value": _NUMBER, "k": {"type": "integer"}, "converged": {"type": "boolean"},
                            "per_group": _ROWS}},
    "regularity": {"type": "object", "required": ["rows"], "properties": {"rows": _ROWS}},
    "simulate": {"type": "object", "required": ["params", "report"],
                 "properties": {"params": {"type": "object"}, "report": {"type": "object",
                                "required": ["worst_case", "members"]}}},
    "counterexample": {"type": "object", "required": ["n", "rows"], "properties": {"rows": _ROWS}},
    "chernov": {"type": "object", "required": ["rows"], "properties": {"rows": _ROWS}},
    "validate": {"type": "object", "required": ["valid", "members", "groups"],
                 "properties": {"valid": {"type": "boolean"}}},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


@dataclass
class RunConfig:
    subcommand: str
    source: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output: str | None = None
    fmt: str = "json"
    threads: int = 1


def _default_threads() -> int:
    env = os.environ.get("CQQ_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError("CQQ_THREADS must be an integer") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="64-bit seed for every random stream (default 0)")
    common.add_argument("--output", "-o", default=None, help="output file, written atomically (default stdout)")
    common.add_argument("--format", dest="fmt", choices=("json", "csv"), default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default $CQQ_THREADS or the number of CPUs)")

    parser = _Parser(prog="cqqkey", description="Secret-key rates and protocol simulation for compound cqq sources.")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True

    p = sub.add_parser("rate", parents=[common], help="lower-bound the forward key capacity")
    p.add_argument("--source")
    p.add_argument("--z", type=int, default=None, help="|U| (default |X|)")
    p.add_argument("--zprime", type=int, default=2, help="|T|")
    p.add_argument("--k", type=int, default=1, choices=None, help="letters per block, 1..3")
    p.add_argument("--restarts", type=int, default=64)
    p.add_argument("--budget", type=int, default=None, help="objective evaluations per group")
    p.add_argument("--max-dim", type=int, default=4096, help="cap on the k-letter Hilbert dimension")

    p = sub.add_parser("regularity", parents=[common], help="regularity modulus over a delta grid")
    p.add_argument("--source")
    p.add_argument("--delta-grid", default="0.05:0.5:10", help="start:stop:count")

    p = sub.add_parser("simulate", parents=[common], help="random-binning protocol, exact evaluation")
    p.add_argument("--source")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--eta", type=float, default=None, help="type-set radius (default 1/(2n))")

    p = sub.add_parser("counterexample", parents=[common], help="the SMI counterexample on a grid of marginals")
    p.add_argument("--grid", type=int, default=4, help="number of grid points, pi included")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--blind", action="store_true", help="run the pi-branch protocol on every member")

    p = sub.add_parser("chernov", parents=[common], help="matrix or classical Chernov experiment")
    p.add_argument("--mode", choices=("matrix", "classical"), default="matrix")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m-list", default="16,64,256")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.5, help="classical: relative deviation")
    p.add_argument("--mean", type=float, default=0.5, help="classical: Bernoulli mean")
    p.add_argument("--channel", choices=("basis", "plus"), default="basis",
                   help="matrix: outputs |x><x| (basis) or |0><0|, |+><+| (plus)")

    p = sub.add_parser("validate", parents=[common], help="check a source file")
    p.add_argument("--source")
    return parser


def _positive_list(text: str, name: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{name} must be a comma-separated list of integers") from None
    if not values or any(v < 1 for v in values):
        raise ValidationError(f"{name} entries must be ≥ 1")
    return values


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def parse_and_validate(argv: Sequence[str] | None = None) -> RunConfig:
    from .regularity import parse_grid

    ns = build_parser().parse_args(argv)
    cmd = ns.subcommand
    fmt = ns.fmt or ("csv" if cmd in ("regularity", "counterexample", "chernov") else "json")
    threads = ns.threads if ns.threads is not None else _default_threads()
    _require(threads >= 1, "threads must be ≥ 1")
    _require(0 <= ns.seed < 2 ** 64, "seed must lie in [0, 2^64)")
    params: dict[str, Any] = {}
    if cmd == "rate":
        _require(ns.z is None or ns.z >= 1, "z must be ≥ 1")
        _require(ns.zprime >= 1, "zprime must be ≥ 1")
        _require(1 <= ns.k <= 3, "k must lie in {1, 2, 3}")
        _require(ns.restarts >= 0, "restarts must be ≥ 0")
        _require(ns.budget is None or ns.budget >= 1, "budget must be ≥ 1")
        _require(ns.max_dim >= 1, "max-dim must be ≥ 1")
        params = {"z": ns.z, "z_prime": ns.zprime, "k": ns.k, "restarts": ns.restarts,
                  "budget": ns.budget, "max_dim": ns.max_dim}
    elif cmd == "regularity":
        grid = parse_grid(ns.delta_grid)
        _require(all(d >= 0 for d in grid), "delta-grid values must be ≥ 0")
        params = {"delta_grid": grid}
    elif cmd == "simulate":
        _require(ns.n >= 1, "n must be ≥ 1")
        _require(ns.delta > 0, "delta must be > 0")
        _require(ns.eta is None or 0 <= ns.eta <= 2, "eta must lie in [0, 2]")
        params = {"n": ns.n, "delta": ns.delta, "eta": ns.eta}
    elif cmd == "counterexample":
        _require(ns.grid >= 2, "grid must be ≥ 2")
        _require(ns.n >= 1, "n must be ≥ 1")
        params = {"grid": ns.grid, "n": ns.n, "blind": ns.blind}
    elif cmd == "chernov":
        _require(ns.n >= 1, "n must be ≥ 1")
        _require(ns.trials >= 1, "trials must be ≥ 1")
        if ns.mode == "matrix":
            _require(ns.eps > 0, "eps must be > 0")
            params = {"mode": "matrix", "n": ns.n, "m_list": _positive_list(ns.m_list, "m-list"),
                      "eps": ns.eps, "trials": ns.trials, "channel": ns.channel}
        else:
            _require(ns.delta >= 0, "delta must be ≥ 0")
            _require(0 <= ns.mean <= 1, "mean must lie in [0, 1]")
            params = {"mode": "classical", "n": ns.n, "delta": ns.delta, "mean": ns.mean, "trials": ns.trials}
    source = getattr(ns, "source", None)
    if cmd in ("rate", "regularity", "simulate", "validate"):
        _require(source is not None, "--source is required")
        _require(os.path.isfile(source), f"source file not found: {source}")
    return RunConfig(cmd, source, params, ns.seed, ns.output, fmt, threads)


# -- output ------------------------------------------------------------------------

def _plain(obj):
    """Convert numpy scalars and arrays to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def render_json(payload: dict) -> str:
    return json.dumps(_plain(payload), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def render_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buf.getvalue()


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".cqqkey-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- subcommands -----------------------------------------------------------------------

def _run_rate(cfg: RunConfig) -> tuple[dict, tuple]:
    from .rates import multi_letter_rate, optimize_k1

    source = load_source(cfg.source)
    p = cfg.params
    base = optimize_k1(source, z=p["z"], z_prime=p["z_prime"], restarts=p["restarts"], budget=p["budget"],
                       seed=cfg.seed, n_jobs=cfg.threads)
    result = base
    if p["k"] > 1:
        # the extended source's natural sizes: z = |X|^k, z' = z'^k, so product chains embed
        result = multi_letter_rate(source, k=p["k"], z_prime=p["z_prime"] ** p["k"], restarts=p["restarts"],
                                   seed=cfg.seed, embed=base, max_dim=p["max_dim"], budget=p["budget"],
                                   n_jobs=cfg.threads)
    payload = result.to_json()
    rows = [[i, json.dumps(g["p"]), g["value"], g["upper_bound"]] for i, g in enumerate(payload["per_group"])]
    return payload, (["group", "p", "value", "upper_bound"], rows)


def _run_regularity(cfg: RunConfig) -> tuple[dict, tuple]:
    from .regularity import regularity_modulus

    rows = regularity_modulus(load_source(cfg.source), cfg.params["delta_grid"])
    return {"rows": rows}, (["delta", "modulus"], [[r["delta"], r["modulus"]] for r in rows])


def _run_simulate(cfg: RunConfig) -> tuple[dict, tuple]:
    from .protocol import evaluate_on_source, random_binning_protocol

    source = load_source(cfg.source)
    p = cfg.params
    proto, params = random_binning_protocol(source, p["n"], p["delta"], p["eta"], seed=cfg.seed)
    report = evaluate_on_source(proto, source)
    payload = {"params": params.to_json(), "log_m": math.log2(proto.M), "report": report.to_json()}
    return payload, report.csv_rows()


def _run_counterexample(cfg: RunConfig) -> tuple[dict, tuple]:
    from .counterexample import default_grid, no_smi_gap_demo, pi_branch_protocol, smi_capacity_protocol

    grid = default_grid(cfg.params["grid"])
    n = cfg.params["n"]
    if cfg.params["blind"]:
        demo = no_smi_gap_demo(pi_branch_protocol(n), grid)
        rows = [{"p": list(r.p), "error_prob": r.error_prob, "security_index": r.security_index,
                 "branch": r.branch, "bound": r.bound} for r in demo["rows"]]
        payload = {"n": n, "mode": "blind", "log_m": demo["log_m"], "worst_case": demo["worst_case"],
                   "chain_holds": demo["chain_holds"], "rows": rows}
    else:
        _, report = smi_capacity_protocol(n, grid)
        rows = [{"p": list(map(float, q)), "error_prob": r.error_prob, "security_index": r.security_index,
                 "branch": "pi" if abs(q[0] - 0.5) < 1e-12 else "other", "log_m": r.log_m}
                for q, r in zip(grid, report.members)]
        payload = {"n": n, "mode": "smi", "worst_case": report.worst_case, "rows": rows}
    table = (["p", "error", "security_index", "branch"],
             [[r["p"][0], r["error_prob"], r["security_index"], r["branch"]] for r in payload["rows"]])
    return payload, table


def chernov_channel(kind: str = "basis") -> CqChannel:
    """Qubit channel with outputs |x><x|, or the non-commuting pair |0><0|, |+><+|."""
    second = np.diag([0.0, 1.0]) if kind == "basis" else np.full((2, 2), 0.5)
    return CqChannel(np.stack([np.diag([1.0, 0.0]), second]).astype(complex), (2, 1))


def _run_chernov(cfg: RunConfig) -> tuple[dict, tuple]:
    from .protocol import classical_chernov_experiment, matrix_chernov_experiment

    p = cfg.params
    if p["mode"] == "classical":
        res = classical_chernov_experiment(p["n"], p["delta"], p["mean"], p["trials"], seed=cfg.seed)
        return {"rows": [res]}, (["n", "delta", "mean", "empirical", "bound"],
                                 [[res["n"], res["delta"], res["mean"], res["empirical"], res["bound"]]])
    res = matrix_chernov_experiment(chernov_channel(p["channel"]), [0.5, 0.5], p["n"], p["m_list"], p["eps"], p["trials"],
                                    seed=cfg.seed)
    header = ["m", "empirical", "log2_bound_printed", "log2_bound_corrected"]
    return res, (header, [[r[h] for h in header] for r in res["rows"]])


def _run_validate(cfg: RunConfig) -> tuple[dict, tuple]:
    source = load_source(cfg.source)
    groups = source.groups()
    payload = {"valid": True, "members": len(source.states), "groups": len(groups),
               "alphabet": source.alphabet_size, "dim_b": source.dim_b, "dim_e": source.dim_e}
    return payload, (list(payload), [list(payload.values())])


_RUNNERS = {"rate": _run_rate, "regularity": _run_regularity, "simulate": _run_simulate,
            "counterexample": _run_counterexample, "chernov": _run_chernov, "validate": _run_validate}


def run(cfg: RunConfig) -> str:
    """Execute a validated config and return the rendered output."""
    payload, (header, rows) = _RUNNERS[cfg.subcommand](cfg)
    payload = _plain(payload)
    # round-trip through the schema before anything is written
    jsonschema.validate(json.loads(render_json(payload)), OUTPUT_SCHEMAS[cfg.subcommand])
    text = render_json(payload) if cfg.fmt == "json" else render_csv(header, rows)
    if cfg.output and cfg.output != "-":
        write_atomic(cfg.output, text)
    else:
        sys.stdout.write(text)
    return text


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_and_validate(argv)
        run(cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK
