"""Command-line entry point.

Every subcommand resolves its options (config file merged with flags) into
one JSON document, runs from that document alone and writes a manifest
``<out>.manifest.json`` next to its main output.  ``replay`` reruns a
manifest and checks that the outputs hash identically.

Exit codes: 0 success, 1 usage or input error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, schemas
from .adaptive import adaptive_plugin_aggregate
from .aggregation import aew_weights, cumulative_scores, dictionary_from_spec, erm_select, proposition1_certificate
from .core import (
    AEWError,
    ConfigError,
    Dataset,
    InvariantViolation,
    hinge_risk_of_values,
    read_dataset_csv,
    write_dataset_csv,
    zero_one_risk_of_values,
)
from .distributions import HolderDistribution, distribution_from_spec
from .experiments import (
    ExperimentConfig,
    experiment_report,
    points_csv,
    rate_fit,
    read_points_csv,
    run_replications,
    summarize,
)
from .plugin import PluginConfig, plugin_classifier

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2


class UsageError(Exception):
    pass


class _WrittenThenFailed(Exception):
    """Outputs were written, but the run must still exit with ``cause``."""

    def __init__(self, outputs, cause):
        super().__init__(str(cause))
        self.outputs = outputs
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# file helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_json(path, doc):
    _atomic_write(path, _dumps(doc))


def _write_dataset(path, data: Dataset):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_dataset_csv(data, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path, what="config"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _read_query(path) -> np.ndarray:
    """Points to predict on: a dataset CSV or a CSV with header ``x1..xd``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header and header[-1].strip() == "label":
        return read_dataset_csv(path).X
    d = len(header)
    if [h.strip() for h in header] != [f"x{j + 1}" for j in range(d)]:
        raise ConfigError(f"{path}: header must be x1..xd")
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return X.reshape(-1, d)


def _derived(out, suffix):
    return str(out) + suffix


# ---------------------------------------------------------------------------
# subcommands: each takes the resolved option document and returns output paths


def run_simulate(opts) -> list:
    doc = {"distribution": opts["distribution"], "n": opts["n"], "seed": opts["seed"]}
    schemas.validate(doc, schemas.SIMULATE)
    dist_ss, data_ss = np.random.SeedSequence([opts["seed"]]).spawn(2)
    pi, info = distribution_from_spec(opts["distribution"], n=opts["n"], rng=np.random.default_rng(dist_ss))
    data = pi.sample(opts["n"], seed=data_ss)
    bayes = pi.risk_report(2.0 * pi.eta_nodes - 1.0 if isinstance(pi, HolderDistribution) else pi.bayes_labels())
    sidecar = {
        "schema_version": schemas.SCHEMA_VERSION,
        "distribution": pi.to_spec(),
        "n": opts["n"],
        "seed": opts["seed"],
        "bayes_risk": bayes.r_star,
        "d": data.d,
    }
    if "params" in info:
        p = info["params"]
        sidecar["lower_bound"] = {"M": p.M, "N": p.N, "n": p.n, "h": p.h, "w": p.w, "kappa": p.kappa,
                                  "sigma": list(p.sigma), "warnings": list(p.warnings)}
    _write_dataset(opts["out"], data)
    sidecar_path = _derived(opts["out"], ".json")
    _write_json(sidecar_path, sidecar)
    return [opts["out"], sidecar_path]


def run_aew(opts) -> list:
    data = read_dataset_csv(opts["data"])
    clip = opts.get("clip", True)
    family = dictionary_from_spec(opts["dictionary"], clip=clip)
    weights = aew_weights(data, family)
    scores = cumulative_scores(data, family)
    values = family.evaluate(data.X)
    doc = {
        "schema_version": schemas.SCHEMA_VERSION,
        "n": data.n,
        "M": family.M,
        "clip": family.clip,
        "labels": list(family.labels),
        "cumulative_scores": scores.tolist(),
        "weights": weights.tolist(),
        "hinge_risks": hinge_risk_of_values(data.y, values).tolist(),
        "zero_one_risks": zero_one_risk_of_values(data.y, values).tolist(),
        "erm_index": erm_select(data, family),
        "scores_match_hinge": weights.scores_match_hinge,
    }
    error = None
    try:
        cert = proposition1_certificate(data, family)
        doc["certificate"] = cert.as_dict() | {"holds": True}
    except InvariantViolation as exc:
        doc["certificate"] = {"holds": False, "message": str(exc)}
        error = exc
    _write_json(opts["out"], doc)
    if error is not None:
        raise _WrittenThenFailed([opts["out"]], error)
    return [opts["out"]]


def _predictions(rule, X, estimates=None):
    rows = []
    labels = rule(X)
    for i, x in enumerate(X):
        row = {"x": x.tolist(), "label": int(labels[i])}
        if estimates is not None:
            row["eta_hat"] = float(estimates.values[i])
            row["flag"] = int(estimates.flags[i])
        rows.append(row)
    return rows


def _predictions_csv(X, estimates, labels) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["eta_hat", "label", "flag"])
    for x, eta, lab, flag in zip(X, estimates.values, labels, estimates.flags):
        writer.writerow([repr(float(v)) for v in x] + [repr(float(eta)), int(lab), int(flag)])
    return buf.getvalue()


def run_plugin(opts) -> list:
    data = read_dataset_csv(opts["data"])
    cfg = PluginConfig(opts["beta"], opts.get("bandwidth"), opts.get("kernel", "uniform"))
    rule = plugin_classifier(data, cfg.beta, cfg=cfg)
    X = _read_query(opts["query"]) if opts.get("query") else data.X
    if str(opts["out"]).endswith(".csv"):
        _atomic_write(opts["out"], _predictions_csv(X, rule.estimate(X), rule(X)))
        return [opts["out"]]
    doc = {
        "schema_version": schemas.SCHEMA_VERSION,
        "n": data.n,
        "beta": cfg.beta,
        "degree": cfg.degree,
        "bandwidth": rule.bandwidth,
        "kernel": cfg.kernel,
        "predictions": _predictions(rule, X, rule.estimate(X)),
    }
    _write_json(opts["out"], doc)
    return [opts["out"]]


def run_adaptive(opts) -> list:
    data = read_dataset_csv(opts["data"])
    if opts.get("trainer", "plugin-grid") != "plugin-grid":
        raise ConfigError(f"$.trainer: unknown trainer {opts['trainer']!r} (available: plugin-grid)")
    cfg = PluginConfig(1.0, kernel=opts.get("kernel", "uniform"))
    fit = adaptive_plugin_aggregate(data, opts.get("d") or data.d, cfg)
    X = _read_query(opts["query"]) if opts.get("query") else data.X
    score = fit.aggregate(X)
    doc = {
        "schema_version": schemas.SCHEMA_VERSION,
        "n": data.n,
        "split": {"m": fit.plan.m, "l": fit.plan.l},
        "grid": {"delta": fit.grid.delta, "k": list(fit.grid.ks), "beta": list(fit.grid.betas)},
        "members": [
            {"label": lbl, "validation_risk": risk, "weight": w}
            for lbl, risk, w in zip(fit.labels, fit.validation_risks, fit.weights.tolist())
        ],
        "predictions": [{"x": x.tolist(), "score": float(s), "label": 1 if s >= 0 else -1}
                        for x, s in zip(X, score)],
    }
    _write_json(opts["out"], doc)
    return [opts["out"]]


def run_experiment(opts) -> list:
    cfg = ExperimentConfig.from_dict(opts["experiment"])
    results = run_replications(cfg, opts.get("jobs", 1))
    report = experiment_report(cfg, results)
    csv_path = _derived(opts["out"], ".points.csv")
    _atomic_write(csv_path, points_csv(summarize(results)))
    _write_json(opts["out"], report)
    return [opts["out"], csv_path]


def run_rates(opts) -> list:
    points = read_points_csv(opts["points"])
    fit = rate_fit(points, opts.get("target"), opts.get("tolerance"))
    _write_json(opts["out"], {"schema_version": schemas.SCHEMA_VERSION, **fit.as_dict()})
    return [opts["out"]]


RUNNERS = {
    "simulate": run_simulate,
    "aew": run_aew,
    "plugin": run_plugin,
    "adaptive": run_adaptive,
    "experiment": run_experiment,
    "rates": run_rates,
}

# option keys naming input files, hashed into the manifest
INPUT_KEYS = {"aew": ("data",), "plugin": ("data", "query"), "adaptive": ("data", "query"), "rates": ("points",)}


# ---------------------------------------------------------------------------
# option resolution


def _merge(config, args, keys):
    """Flags override config-file values; only ``keys`` are taken from flags."""
    opts = dict(config)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def _require(opts, *keys):
    for k in keys:
        if opts.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def resolve(args) -> dict:
    config = _load_json(args.config) if getattr(args, "config", None) else {}
    if not isinstance(config, dict):
        raise ConfigError("$: config must be a JSON object")
    cmd = args.command
    if cmd == "simulate":
        if "distribution" not in config and "type" in config:
            config = {"distribution": config}
        opts = _merge(config, args, ("n", "seed", "out"))
        opts.setdefault("seed", 0)
        _require(opts, "distribution", "n", "out")
    elif cmd == "aew":
        opts = _merge(config, args, ("data", "out"))
        if args.dict is not None:
            opts["dictionary"] = _load_json(args.dict, "dictionary")
        if args.no_clip:
            opts["clip"] = False
        _require(opts, "data", "dictionary", "out")
        schemas.validate(opts["dictionary"], schemas.DICTIONARY, "$.dictionary")
    elif cmd == "plugin":
        opts = _merge(config, args, ("data", "beta", "bandwidth", "kernel", "query", "out"))
        _require(opts, "data", "beta", "out")
    elif cmd == "adaptive":
        opts = _merge(config, args, ("data", "d", "trainer", "kernel", "query", "out"))
        _require(opts, "data", "out")
    elif cmd == "experiment":
        if not config:
            raise UsageError("experiment needs --config")
        experiment = dict(config)
        if args.seed is not None:
            experiment["seed"] = args.seed
        schemas.validate(experiment, schemas.EXPERIMENT)
        opts = {"experiment": experiment, "jobs": args.jobs or 1, "out": args.out}
        _require(opts, "out")
    elif cmd == "rates":
        opts = _merge(config, args, ("points", "target", "tolerance", "out"))
        _require(opts, "points", "out")
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown subcommand {cmd!r}")
    if args.seed is not None:
        opts["seed"] = args.seed
    for k in INPUT_KEYS.get(cmd, ()) + ("out",):
        if opts.get(k) is not None:
            opts[k] = _abs(opts[k])
    return opts


# ---------------------------------------------------------------------------
# manifests


def _manifest_path(out) -> str:
    return _derived(out, ".manifest.json")


def execute(cmd: str, opts: dict) -> list:
    """Run one subcommand from resolved options and write its manifest."""
    inputs = [{"path": opts[k], "sha256": _sha256(opts[k])}
              for k in INPUT_KEYS.get(cmd, ()) if opts.get(k) is not None]
    start = time.perf_counter()
    failure = None
    try:
        outputs = RUNNERS[cmd](opts)
    except _WrittenThenFailed as exc:
        outputs, failure = exc.outputs, exc.cause
    manifest = {
        "schema_version": schemas.SCHEMA_VERSION,
        "subcommand": cmd,
        "config": opts,
        "seed": opts.get("seed", opts.get("experiment", {}).get("seed")),
        "version": __version__,
        "inputs": inputs,
        "outputs": [{"path": p, "sha256": _sha256(p)} for p in outputs],
        "exit_code": EXIT_OK if failure is None else EXIT_INVARIANT,
        "duration_seconds": time.perf_counter() - start,
    }
    _write_json(_manifest_path(opts["out"]), manifest)
    if failure is not None:
        raise failure
    return outputs


def replay(manifest_path, out=None) -> tuple:
    """Rerun a manifest.  Returns ``(matches, new_outputs)``.

    With ``out`` set, outputs go there instead of overwriting the originals.
    """
    manifest = _load_json(manifest_path, "manifest")
    cmd = manifest.get("subcommand")
    if cmd not in RUNNERS:
        raise ConfigError(f"{manifest_path}: unknown subcommand {cmd!r}")
    for item in manifest.get("inputs", []):
        if _sha256(item["path"]) != item["sha256"]:
            raise ConfigError(f"input changed since the manifest was written: {item['path']}")
    opts = dict(manifest["config"])
    if out is not None:
        opts["out"] = _abs(out)
    outputs = execute(cmd, opts)
    recorded = [item["sha256"] for item in manifest["outputs"]]
    return recorded == [_sha256(p) for p in outputs], outputs


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aewclass", description="Exponential-weight aggregation of classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, out_help):
        p.add_argument("--config", metavar="PATH", help="JSON file with options (flags override it)")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--out", metavar="PATH", help=out_help)

    p = sub.add_parser("simulate", help="draw a labelled sample from a distribution")
    common(p, "dataset CSV (a .json sidecar and a manifest are written next to it)")
    p.add_argument("--n", type=int, help="sample size")

    p = sub.add_parser("aew", help="exponential weights over a dictionary, with the risk certificate")
    common(p, "JSON with weights and certificate")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--dict", metavar="JSON", help="dictionary specification")
    p.add_argument("--no-clip", action="store_true", help="keep member values outside [-1, 1]")

    p = sub.add_parser("plugin", help="local polynomial plug-in classifier")
    common(p, "JSON with estimates and predicted labels")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--beta", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--kernel", choices=("uniform", "epanechnikov"))
    p.add_argument("--query", metavar="CSV", help="points to predict (default: training points)")

    p = sub.add_parser("adaptive", help="split-validate-aggregate over the smoothness grid")
    common(p, "JSON with grid, validation risks, weights and predictions")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--d", type=int, help="dimension (default: from the data)")
    p.add_argument("--trainer", choices=("plugin-grid",))
    p.add_argument("--kernel", choices=("uniform", "epanechnikov"))
    p.add_argument("--query", metavar="CSV")

    p = sub.add_parser("experiment", help="Monte Carlo excess risks from a JSON config")
    common(p, "JSON report (points CSV written to <out>.points.csv)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for replications")

    p = sub.add_parser("rates", help="log-log slope of an existing points CSV")
    common(p, "JSON rate report")
    p.add_argument("--points", metavar="CSV")
    p.add_argument("--target", type=float, help="target decay exponent")
    p.add_argument("--tolerance", type=float)

    p = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    p.add_argument("manifest", metavar="MANIFEST")
    p.add_argument("--out", metavar="PATH", help="write outputs here instead of the recorded path")
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            matches, outputs = replay(args.manifest, args.out)
            for p in outputs:
                print(p)
            if not matches:
                print("replay: outputs differ from the manifest", file=sys.stderr)
                return EXIT_USAGE
            print("replay: outputs identical")
            return EXIT_OK
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        for p in execute(args.command, resolve(args)):
            print(p)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (AEWError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
