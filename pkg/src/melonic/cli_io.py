"""Command-line entry point ``melonic``.

Every subcommand prints one JSON document to stdout holding the tool
version, the subcommand, its fully resolved options and its results.
Options come from built-in defaults, then an optional flat JSON file given
by ``--config``, then explicit flags, later sources winning.

Exit codes: 0 success, 2 usage or input error, 3 capacity exceeded,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .ensemble_lab import (
    ExperimentConfig,
    PlantedSource,
    lambda_sweep,
    norm_expectation_mc,
    sweep_csv,
    variance_mc,
)
from .errors import CapacityError, InputError, MelonicError, NumericError
from .power_iter import PowerIterParams, estimate_lambda_max, lambda_from_trace
from .symtensor import TensorShape, read_tensor, sample_gaussian, write_tensor
from .wick_oracle import (
    SUPPORTED_NORM,
    SUPPORTED_NORM_SQUARED,
    census_summary,
    dominance_report,
    expected_norm_polynomial,
    leading_term,
    variance_polynomial,
)

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_NUMERIC = 0, 2, 3, 4

# per-subcommand defaults; keys are argparse dests and config-file keys
DEFAULTS = {
    "sample": {"n": None, "q": None, "seed": 0, "out": None},
    "iterate": {
        "tensor": None, "n": None, "q": None, "seed": 0, "tensor_seed": 0, "restarts": 16,
        "max_steps": 60, "align_tol": 1e-12, "fallback": "shifted",
    },
    "lambda-sweep": {
        "q": 3, "n_list": "8,16,32,64", "trials": 100, "restarts": 8, "seed": 0, "max_steps": 60,
        "fallback": "shifted", "out_csv": "sweep.csv", "out_json": None, "out_plot": None,
        "planted": False, "workers": 1,
    },
    "wick": {"q": None, "p": None, "mode": "exact", "out": None, "allow_large": False},
    "census": {"q": None, "p": None, "out": None, "allow_large": False},
    "variance": {"q": 2, "p": 1, "n_list": "10,40", "samples": 10000, "seed": 0, "out": None},
    "norm-check": {"q": 3, "p": 1, "n_list": "3,6,12", "samples": 10000, "seed": 0, "out": None},
}
# options that change how work is scheduled but never the results
_EXECUTION_ONLY = {"workers"}


class UsageError(InputError):
    pass


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of option values")

    parser = argparse.ArgumentParser(prog="melonic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"melonic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=None)

    p = add("sample", "draw a Gaussian tensor and write it in binary form")
    p.add_argument("--n", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("iterate", "estimate the largest eigenvalue of one tensor")
    p.add_argument("--tensor", help="tensor file; otherwise one is sampled from --n/--q/--tensor-seed")
    p.add_argument("--n", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--tensor-seed", type=int)
    p.add_argument("--seed", type=int, help="restart seed")
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--align-tol", type=float)
    p.add_argument("--fallback", choices=("shifted", "none"))

    p = add("lambda-sweep", "largest-eigenvalue statistics over a range of N")
    p.add_argument("--q", type=int)
    p.add_argument("--n-list")
    p.add_argument("--trials", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--fallback", choices=("shifted", "none"))
    p.add_argument("--out-csv")
    p.add_argument("--out-json", help="summary JSON (default: next to the CSV)")
    p.add_argument("--out-plot", help="gnuplot script")
    p.add_argument("--planted", action="store_const", const=True,
                   help="use rank-one tensors with eigenvalue sqrt(N) instead of Gaussian ones")
    p.add_argument("--workers", type=int)

    p = add("wick", "exact Gaussian averages by Wick enumeration")
    p.add_argument("--q", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--mode", choices=("exact", "census", "dominant"))
    p.add_argument("--out")
    p.add_argument("--allow-large", action="store_const", const=True)

    p = add("census", "face and chain census of every Wick configuration")
    p.add_argument("--q", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--out")
    p.add_argument("--allow-large", action="store_const", const=True)

    for name, help_ in (("variance", "Monte Carlo variance of x.x"), ("norm-check", "Monte Carlo mean of x.x")):
        p = add(name, help_ + " against the exact polynomial")
        p.add_argument("--q", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--n-list")
        p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
    return parser


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS[command])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a flat JSON object")
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in opts:
                raise UsageError(f"unknown option {key!r} for {command}")
            if isinstance(value, (dict, list)) and dest != "n_list":
                raise UsageError(f"config value for {key!r} must be a scalar")
            opts[dest] = value
    for dest in opts:
        value = getattr(args, dest, None)
        if value is not None:
            opts[dest] = value
    return opts


def _require(opts: dict, *names: str) -> None:
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Fraction):
        return {"num": str(obj.numerator), "den": str(obj.denominator)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"


def _envelope(command: str, opts: dict, result) -> dict:
    config = {k: v for k, v in opts.items() if k not in _EXECUTION_ONLY}
    return {"tool": "melonic", "version": __version__, "command": command, "config": config, "result": result}


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(opts: dict) -> dict:
    _require(opts, "n", "q", "out")
    C = sample_gaussian(TensorShape(opts["n"], opts["q"]), opts["seed"])
    try:
        write_tensor(opts["out"], C)
    except OSError as exc:
        raise UsageError(f"cannot write {opts['out']}: {exc}") from None
    digest = hashlib.sha256(Path(opts["out"]).read_bytes()).hexdigest()
    return {"components": C.shape.n_components, "sha256": digest, "path": str(opts["out"])}


def _power_params(opts: dict) -> PowerIterParams:
    kw = {k: opts[k] for k in ("restarts", "max_steps", "seed", "fallback") if k in opts}
    if "align_tol" in opts:
        kw["align_tol"] = opts["align_tol"]
    return PowerIterParams(**kw)


def cmd_iterate(opts: dict) -> dict:
    if opts["tensor"]:
        try:
            C = read_tensor(opts["tensor"])
        except OSError as exc:
            raise UsageError(f"cannot read {opts['tensor']}: {exc}") from None
    else:
        _require(opts, "n", "q")
        C = sample_gaussian(TensorShape(opts["n"], opts["q"]), opts["tensor_seed"])
    best, outcomes = estimate_lambda_max(C, _power_params(opts))
    restarts = []
    for o in outcomes:
        growth = lambda_from_trace(o.trace, C.q) if o.trace.steps_taken else None
        restarts.append({
            "index": o.index, "lambda": o.pair.lam, "residual": o.pair.residual, "converged": o.converged,
            "power_steps": o.trace.steps_taken, "power_converged": o.trace.converged,
            "fallback_steps": o.fallback_steps, "growth_estimate": growth,
        })
    return {
        "n_dim": C.n_dim, "q": C.q, "lambda": best.lam, "lambda_abs": best.abs_lambda,
        "residual": best.residual, "converged": any(o.converged for o in outcomes),
        "vector": best.vector.tolist(), "restarts": restarts,
    }


def gnuplot_script(csv_name: str, result) -> str:
    """Script plotting every trial from the CSV, the medians, and sqrt(N/(q+1))."""
    q = result.config.q
    medians = "\n".join(f"{s.n_dim} {s.median!r}" for s in result.per_n if s.converged)
    return f"""# generated by melonic {__version__}; run with: gnuplot <this file>
set datafile separator ","
set terminal svg size 800,600
set output "{Path(csv_name).stem}.svg"
set logscale xy
set xlabel "N"
set ylabel "|lambda_max|"
set key left top
$medians << EOD
{medians}
EOD
ref(n) = sqrt(n / {q + 1}.0)
plot "{csv_name}" using 1:($6 == 1 ? $4 : 1/0) every ::1 with points pt 7 ps 0.4 title "trials", \\
     $medians using 1:2 with linespoints lw 2 title "median", \\
     ref(x) with lines dt 2 title "sqrt(N/{q + 1})"
"""


def cmd_lambda_sweep(opts: dict) -> tuple[dict, int]:
    n_values = _int_list(opts["n_list"])
    params = PowerIterParams(restarts=opts["restarts"], max_steps=opts["max_steps"], fallback=opts["fallback"])
    config = ExperimentConfig(
        q=opts["q"], n_values=tuple(n_values), trials=opts["trials"], power_params=params,
        master_seed=opts["seed"], mode="lambda_sweep",
    )
    source = PlantedSource() if opts["planted"] else None
    workers = int(opts["workers"] or 1)
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    result = lambda_sweep(config, workers=workers, source=source)
    out_csv = Path(opts["out_csv"])
    out_json = Path(opts["out_json"]) if opts["out_json"] else out_csv.with_suffix(".summary.json")
    summary = result.summary()
    _write(out_csv, sweep_csv(result))
    envelope = _envelope("lambda-sweep", opts, {**summary, "csv": out_csv.name})
    _write(out_json, dumps(envelope))
    if opts["out_plot"]:
        _write(opts["out_plot"], gnuplot_script(out_csv.name, result))
    failed = sum(e.error is not None for e in result.estimates)
    code = EXIT_NUMERIC if failed == len(result.estimates) else EXIT_OK
    return {**summary, "csv": str(out_csv), "json": str(out_json), "plot": opts["out_plot"]}, code


def _check_supported(q, p, table, what):
    if (q, p) not in table:
        pairs = ", ".join(f"(q={a}, p={b})" for a, b in table)
        raise CapacityError(f"{what} is supported for {pairs}; got (q={q}, p={p})")


def cmd_wick(opts: dict) -> dict:
    _require(opts, "q", "p")
    q, p, mode, large = opts["q"], opts["p"], opts["mode"], bool(opts["allow_large"])
    if not large:
        _check_supported(q, p, SUPPORTED_NORM, f"wick --mode {mode}")
    if mode == "exact":
        poly = expected_norm_polynomial(q, p, allow_large=large)
        power, coef = leading_term(poly)
        return {**poly.to_json(q, p), "leading": {"power": power, "coefficient": coef}}
    if mode == "census":
        return _census(q, p, large)
    r = dominance_report(q, p, allow_large=large)
    return {
        "q": q, "p": p, "matchings": r.n_matchings,
        "dominant_count": r.maximal_configurations,
        "rule_matchings": r.rule_matchings,
        "rule_wirings": r.rule_wirings,
        "maximal_configurations": r.maximal_configurations,
        "maximal_matchings": r.maximal_matchings,
        "maximal_outside_rules": r.maximal_outside_rules,
        "predicted_count": r.predicted_count,
        "leading": {"power": r.leading[0], "coefficient": r.leading[1]},
        "predicted_leading": {"power": r.predicted_leading[0], "coefficient": r.predicted_leading[1]},
        "consistent": r.consistent,
    }


def _census(q, p, large):
    s = census_summary(q, p, allow_large=large)
    s["summary"] = (
        f"face bound violations: {s['face_bound_violations']}; "
        f"saturating assignments: {s['saturating']}; without a unit face: {s['saturating_without_f1']}"
    )
    return s


def cmd_census(opts: dict) -> dict:
    _require(opts, "q", "p")
    large = bool(opts["allow_large"])
    if not large:
        _check_supported(opts["q"], opts["p"], SUPPORTED_NORM, "census")
    return _census(opts["q"], opts["p"], large)


def cmd_norm_check(opts: dict) -> dict:
    q, p = opts["q"], opts["p"]
    exact = expected_norm_polynomial(q, p) if (q, p) in SUPPORTED_NORM else None
    rows = []
    for n in _int_list(opts["n_list"]):
        m = norm_expectation_mc(q, p, n, opts["samples"], opts["seed"])
        row = {"n_dim": n, "mean": m.mean, "stderr": m.stderr, "samples": m.samples}
        if exact is not None:
            value = exact(n)
            row.update(exact=float(value), z=(m.mean - float(value)) / m.stderr if m.stderr else None)
        rows.append(row)
    return {"q": q, "p": p, "polynomial": exact.to_json(q, p) if exact is not None else None, "rows": rows}


def cmd_variance(opts: dict) -> dict:
    q, p = opts["q"], opts["p"]
    exact = variance_polynomial(q, p) if (q, p) in SUPPORTED_NORM_SQUARED else None
    rows = []
    for n in _int_list(opts["n_list"]):
        v = variance_mc(q, p, n, opts["samples"], opts["seed"])
        row = {"n_dim": n, "var_hat": v.var_hat, "mean_sq": v.mean_sq, "var_stderr": v.var_stderr,
               "relative": v.relative, "samples": v.samples}
        if exact is not None:
            value = float(exact(n))
            row.update(exact=value, z=(v.var_hat - value) / v.var_stderr if v.var_stderr else None)
        rows.append(row)
    out = {"q": q, "p": p, "rows": rows}
    if exact is not None:
        out["polynomial"] = exact.to_json(q, p)
        out["degree"] = exact.degree
    return out


COMMANDS = {
    "sample": cmd_sample,
    "iterate": cmd_iterate,
    "lambda-sweep": cmd_lambda_sweep,
    "wick": cmd_wick,
    "census": cmd_census,
    "variance": cmd_variance,
    "norm-check": cmd_norm_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    try:
        opts = resolve_options(command, args)
        out = COMMANDS[command](opts)
        code = EXIT_OK
        if isinstance(out, tuple):
            out, code = out
        text = dumps(_envelope(command, opts, out))
        if opts.get("out") and command != "sample":
            _write(opts["out"], text)
        sys.stdout.write(text)
        return code
    except CapacityError as exc:
        print(f"melonic: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericError as exc:
        print(f"melonic: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, TypeError) as exc:
        print(f"melonic: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MelonicError as exc:
        print(f"melonic: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
