"""Command-line front end.

Every command resolves its parameters as built-in defaults, then the
``--config`` JSON file, then explicit flags. Outputs go to
``<out>/<command>-<config hash>/``; an existing run directory is only
overwritten with ``--force``.

Exit codes: 0 success, 1 input or contract error, 2 the computation finished
without meeting its tolerance (BA hit ``max_iters``, a check did not pass).
"""
import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .ba import BaConfig, optimize
from .continuous import (
    IwaeEvidence,
    LinearGaussianModel,
    glossy_run,
    pushforward_check,
    pushforward_check_mc,
)
from .errors import InputFormatError, RdlvmError
from .model import (
    DEFAULT_KKT_TOL,
    PriorWeights,
    eval_nll,
    kkt_check,
    prior_to_json,
    read_loglik_csv,
    read_prior_json,
)
from .rd_bridge import equivalence_from_result
from .synth import (
    TemplateModel,
    convergence_experiment,
    generate,
    random_templates,
    read_binary_vectors,
    read_dataset,
    skewed_prior,
    write_dataset,
)

log = logging.getLogger("rdlvm")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

_BA_DEFAULTS = {"alpha": 1.0, "max_iters": 10000, "gap_tol": 1e-6, "prune_tol": 1e-12}
_SYNTH_DEFAULTS = {
    "n_templates": 10,
    "dim": 64,
    "flip_prob": 0.02,
    "n_train": 5000,
    "n_val": 1000,
    "n_test": 2000,
    "templates": None,
}

DEFAULTS = {
    "optimize": {"lik": None, "prior": None, **_BA_DEFAULTS},
    "bounds": {"lik": None, "prior": None, "alpha": 1.0, "tol": DEFAULT_KKT_TOL},
    "verify-equivalence": {"lik": None, **_BA_DEFAULTS},
    "glossy": {"model": None, "data": None, "evidence": "exact", "k": 100, "tol": DEFAULT_KKT_TOL},
    "pushforward-check": {
        "model": None,
        "data": None,
        "mode": "linear",
        "target_c": None,
        "source": None,
        "target": None,
        "n_mc": 100000,
    },
    "synth-gen": dict(_SYNTH_DEFAULTS),
    "experiment": {
        **_SYNTH_DEFAULTS,
        "dataset": None,
        "distractors": 0,
        "drop": 0,
        "init": "skewed",
        "skew_head": 0.91,
        **_BA_DEFAULTS,
    },
}
REQUIRED = {
    "optimize": ("lik",),
    "bounds": ("lik",),
    "verify-equivalence": ("lik",),
    "glossy": ("model", "data"),
    "pushforward-check": ("model", "data"),
}
_GLOBAL_KEYS = ("config", "seed", "out", "force", "no_timestamp")


class CliError(Exception):
    """Input or contract error; reported and mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


@dataclass
class BoundsReport:
    nll_upper: float
    nll_lower: float
    gap: float
    glossy_max: float
    glossy_std: float
    certificate: str
    objective: str = "negative log likelihood"
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, nll_upper, max_log_c, glossy_max, glossy_std, holds, alpha=1.0, metadata=None):
        # sup log c >= 0 analytically; clamp rounding noise so gap >= 0
        gap = max(float(max_log_c), 0.0)
        return cls(
            nll_upper=float(nll_upper),
            nll_lower=float(nll_upper) - gap,
            gap=gap,
            glossy_max=float(glossy_max),
            glossy_std=float(glossy_std),
            certificate="pass" if holds else "fail",
            objective="negative log likelihood" if alpha == 1 else f"alpha-generalized objective (alpha={alpha!r})",
            metadata=metadata or {},
        )


# -- helpers -----------------------------------------------------------------


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _config_hash(command, cfg) -> str:
    payload = json.dumps({"command": command, **cfg}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def _resolve(command, ns) -> tuple[dict, dict]:
    """Merge defaults < config file < flags; return (command config, global options)."""
    flags = vars(ns)
    file_cfg = {}
    if flags.get("config"):
        path = Path(flags["config"])
        if not path.exists():
            raise CliError(f"config file {path} does not exist")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(file_cfg, dict):
            raise CliError(f"{path}: config must be a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    defaults = DEFAULTS[command]
    glob = {"seed": 0, "out": "runs", "force": False, "no_timestamp": False}
    cfg = dict(defaults)
    for k, v in file_cfg.items():
        if k in glob:
            glob[k] = v
        elif k in defaults:
            cfg[k] = v
        else:
            raise CliError(f"unknown config key {k!r} for command {command!r}")
    for k, v in flags.items():
        if k in ("command", "config", "handler"):
            continue
        if k in glob:
            glob[k] = v
        else:
            cfg[k] = v
    for k in REQUIRED.get(command, ()):
        if cfg.get(k) is None:
            raise CliError(f"{command}: missing required parameter --{k.replace('_', '-')}")
    seed = glob["seed"]
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise CliError(f"--seed must be an unsigned 64-bit integer, got {seed!r}")
    return cfg, glob


def _run_dir(command, cfg, glob) -> tuple[Path, str]:
    h = _config_hash(command, {**cfg, "seed": glob["seed"]})
    run = Path(glob["out"]) / f"{command}-{h[:12]}"
    if run.exists() and not glob["force"]:
        raise CliError(f"run directory {run} already exists (use --force to overwrite)")
    run.mkdir(parents=True, exist_ok=True)
    return run, h


def _metadata(command, cfg, glob, h) -> dict:
    meta = {"command": command, "seed": glob["seed"], "config_hash": h, "config": cfg, "version": __version__}
    if not glob["no_timestamp"]:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat()
    return meta


def _positive(name, value, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0
    if integer:
        ok = ok and int(value) == value
    if not ok:
        kind = "a positive integer" if integer else "positive"
        raise CliError(f"{name} must be {kind}, got {value!r}")


def _ba_config(cfg) -> BaConfig:
    _positive("alpha", cfg["alpha"])
    _positive("max_iters", cfg["max_iters"], integer=True)
    _positive("gap_tol", cfg["gap_tol"])
    if not (isinstance(cfg["prune_tol"], (int, float)) and cfg["prune_tol"] >= 0):
        raise CliError(f"prune_tol must be nonnegative, got {cfg['prune_tol']!r}")
    return BaConfig(float(cfg["alpha"]), int(cfg["max_iters"]), float(cfg["gap_tol"]), float(cfg["prune_tol"]))


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file {p} does not exist")
    return p


def read_data_csv(path) -> np.ndarray:
    """Numeric CSV, one point per row; a non-numeric first row is taken as a header."""
    rows, width = [], None
    with _require_file(path, "data").open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise InputFormatError(f"{path}: line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputFormatError(f"{path}: line {lineno}: values must be finite")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputFormatError(f"{path}: line {lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def _matrix(value, name, shape=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InputFormatError(f"model field {name!r} must be numeric") from None
    if shape is not None:
        if arr.ndim == 1 and arr.size == shape[0] * shape[1]:
            arr = arr.reshape(shape)  # row-major flat form
        if arr.shape != shape:
            raise InputFormatError(f"model field {name!r} must have shape {shape}, got {arr.shape}")
    return arr


def read_model_json(path) -> LinearGaussianModel:
    """Linear-Gaussian model file: ``A`` (row-major), ``b``, ``sigma``, optional ``C``."""
    p = _require_file(path, "model")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{p}: line {exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise InputFormatError(f"{p}: model must be a JSON object")
    missing = [k for k in ("A", "b", "sigma") if k not in obj]
    if missing:
        raise InputFormatError(f"{p}: model is missing field(s) {missing}")
    unknown = set(obj) - {"A", "b", "sigma", "C", "latent_dim", "data_dim"}
    if unknown:
        raise InputFormatError(f"{p}: unknown model field(s) {sorted(unknown)}")
    b = _matrix(obj["b"], "b")
    if b.ndim != 1:
        raise InputFormatError("model field 'b' must be a flat list")
    d = b.size
    A = _matrix(obj["A"], "A")
    if A.ndim == 1:
        k = obj.get("latent_dim", A.size // d if d else 0)
        A = _matrix(obj["A"], "A", (d, int(k)))
    if A.ndim != 2 or A.shape[0] != d:
        raise InputFormatError(f"model field 'A' must have {d} rows")
    k = A.shape[1]
    C = None if obj.get("C") is None else _matrix(obj["C"], "C", (k, k))
    sigma = obj["sigma"]
    if not isinstance(sigma, (int, float)) or isinstance(sigma, bool):
        raise InputFormatError("model field 'sigma' must be a number")
    return LinearGaussianModel(A, b, float(sigma), C)


def _components(value, name):
    if value is None:
        raise CliError(f"pushforward-check --mode mc needs --{name}")
    names = value.split(",") if isinstance(value, str) else list(value)
    comps = []
    for n in names:
        dist = getattr(stats, n.strip(), None)
        if dist is None:
            raise CliError(f"unknown distribution {n!r} in --{name}")
        comps.append(dist())
    return comps


def _write(run, name, text):
    (run / name).write_text(text)


# -- commands ----------------------------------------------------------------


def cmd_optimize(cfg, glob) -> int:
    bacfg = _ba_config(cfg)
    lik = read_loglik_csv(_require_file(cfg["lik"], "likelihood"))
    init = None if cfg["prior"] is None else read_prior_json(_require_file(cfg["prior"], "prior"), lik.support_ids)
    run, h = _run_dir("optimize", cfg, glob)
    result = optimize(lik, init, bacfg)
    ev = eval_nll(lik, result.prior, bacfg.alpha)
    report = BoundsReport.from_values(
        ev.nll, ev.max_log_c, ev.max_log_c, ev.std_log_c, result.certificate.holds, bacfg.alpha,
        {**_metadata("optimize", cfg, glob, h), "converged": result.converged, "iterations": result.n_iters},
    )
    _write(run, "prior.json", _dump_json(prior_to_json(result.prior)))
    _write(run, "trace.csv", result.trace.to_csv())
    _write(run, "report.json", _dump_json(asdict(report)))
    print(run)
    if not result.converged:
        log.warning("BA stopped after %d iterations without reaching gap_tol", result.n_iters)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bounds(cfg, glob) -> int:
    _positive("alpha", cfg["alpha"])
    _positive("tol", cfg["tol"])
    lik = read_loglik_csv(_require_file(cfg["lik"], "likelihood"))
    prior = (
        PriorWeights.uniform(lik.n_support, lik.support_ids)
        if cfg["prior"] is None
        else read_prior_json(_require_file(cfg["prior"], "prior"), lik.support_ids)
    )
    run, h = _run_dir("bounds", cfg, glob)
    ev = eval_nll(lik, prior, cfg["alpha"])
    cert = kkt_check(ev, prior, cfg["tol"])
    meta = _metadata("bounds", cfg, glob, h)
    meta["worst_violation"] = {"index": cert.worst_index, "support_id": lik.support_ids[cert.worst_index],
                               "nats": cert.worst_violation}
    report = BoundsReport.from_values(ev.nll, ev.max_log_c, ev.max_log_c, ev.std_log_c, cert.holds, cfg["alpha"], meta)
    _write(run, "report.json", _dump_json(asdict(report)))
    print(run)
    return EXIT_OK


def cmd_verify_equivalence(cfg, glob) -> int:
    bacfg = _ba_config(cfg)
    lik = read_loglik_csv(_require_file(cfg["lik"], "likelihood"))
    run, h = _run_dir("verify-equivalence", cfg, glob)
    result = optimize(lik, None, bacfg)
    rep = equivalence_from_result(lik, result)
    _write(run, "equivalence.json", _dump_json(rep.to_json()))
    print(run)
    return EXIT_OK if rep.passed else EXIT_NOT_CONVERGED


def cmd_glossy(cfg, glob) -> int:
    _positive("tol", cfg["tol"])
    model = read_model_json(cfg["model"])
    data = read_data_csv(cfg["data"])
    if data.shape[1] != model.data_dim:
        raise CliError(f"data has {data.shape[1]} columns but the model expects {model.data_dim}")
    if cfg["evidence"] == "exact":
        mode = "exact"
    elif cfg["evidence"] == "iwae":
        _positive("k", cfg["k"], integer=True)
        mode = IwaeEvidence(int(cfg["k"]), glob["seed"])
    else:
        raise CliError(f"--evidence must be 'exact' or 'iwae', got {cfg['evidence']!r}")
    run, h = _run_dir("glossy", cfg, glob)
    sample, gs = glossy_run(model, data, mode)
    nll_upper = -float(np.mean(sample.log_evidence))
    holds = bool(np.all(np.abs(sample.log_c_values) <= cfg["tol"]))
    meta = {**_metadata("glossy", cfg, glob, h), "n_points": int(len(data)),
            "lower_bound_kind": "glossy estimate (sup over sampled latent points)"}
    report = BoundsReport.from_values(nll_upper, gs.max_stat, gs.max_stat, gs.std_stat, holds, 1.0, meta)
    _write(run, "report.json", _dump_json(asdict(report)))
    print(run)
    return EXIT_OK


def cmd_pushforward(cfg, glob) -> int:
    model = read_model_json(cfg["model"])
    data = read_data_csv(cfg["data"])
    if data.shape[1] != model.data_dim:
        raise CliError(f"data has {data.shape[1]} columns but the model expects {model.data_dim}")
    if cfg["mode"] == "linear":
        if cfg["target_c"] is None:
            raise CliError("pushforward-check --mode linear needs --target-c")
        tc = cfg["target_c"]
        if isinstance(tc, str):
            try:
                tc = json.loads(tc)
            except json.JSONDecodeError:
                raise CliError("--target-c must be a JSON matrix") from None
        target = _matrix(tc, "target_c", (model.latent_dim, model.latent_dim))
        run, h = _run_dir("pushforward-check", cfg, glob)
        rep = pushforward_check(model, target, data)
    elif cfg["mode"] == "mc":
        src, tgt = _components(cfg["source"], "source"), _components(cfg["target"], "target")
        if len(src) != model.latent_dim or len(tgt) != model.latent_dim:
            raise CliError(f"need {model.latent_dim} source and target components")
        _positive("n_mc", cfg["n_mc"], integer=True)
        run, h = _run_dir("pushforward-check", cfg, glob)
        rep = pushforward_check_mc(src, tgt, model, data, int(cfg["n_mc"]), glob["seed"])
    else:
        raise CliError(f"--mode must be 'linear' or 'mc', got {cfg['mode']!r}")
    _write(run, "pushforward.json", _dump_json({**rep.to_json(), "metadata": _metadata("pushforward-check", cfg, glob, h)}))
    print(run)
    return EXIT_OK if rep.passed else EXIT_NOT_CONVERGED


def _template_model(cfg, seed) -> TemplateModel:
    for key in ("n_templates", "dim"):
        _positive(key, cfg[key], integer=True)
    if not (isinstance(cfg["flip_prob"], (int, float)) and 0 < cfg["flip_prob"] < 0.5):
        raise CliError(f"flip_prob must lie in (0, 0.5), got {cfg['flip_prob']!r}")
    if cfg["templates"] is not None:
        templates = read_binary_vectors(_require_file(cfg["templates"], "template"))
    else:
        templates = random_templates(int(cfg["n_templates"]), int(cfg["dim"]), seed=[seed, 1])
    return TemplateModel(templates, float(cfg["flip_prob"]))


def _sizes(cfg):
    for key in ("n_train", "n_val", "n_test"):
        _positive(key, cfg[key], integer=True)
    return int(cfg["n_train"]), int(cfg["n_val"]), int(cfg["n_test"])


def cmd_synth(cfg, glob) -> int:
    model = _template_model(cfg, glob["seed"])
    sizes = _sizes(cfg)
    run, _ = _run_dir("synth-gen", cfg, glob)
    ds = generate(model, sizes, glob["seed"])
    write_dataset(ds, model, run)
    print(run)
    return EXIT_OK


def cmd_experiment(cfg, glob) -> int:
    bacfg = _ba_config(cfg)
    seed = glob["seed"]
    if cfg["dataset"] is not None:
        try:
            model, ds = read_dataset(_require_file(cfg["dataset"], "dataset sidecar"))
        except FileNotFoundError as exc:
            raise CliError(str(exc)) from None
    else:
        model = _template_model(cfg, seed)
        ds = generate(model, _sizes(cfg), seed)
    for key in ("distractors", "drop"):
        v = cfg[key]
        if not (isinstance(v, int) and v >= 0):
            raise CliError(f"{key} must be a nonnegative integer, got {v!r}")
    if cfg["drop"] >= model.n_templates:
        raise CliError("drop must leave at least one true template")
    candidates = model.templates[cfg["drop"]:]
    if cfg["distractors"]:
        extra = random_templates(cfg["distractors"], model.dim, seed=[seed, 2], exclude=model.templates)
        candidates = np.vstack([candidates, extra])
    if cfg["init"] == "skewed":
        if not (isinstance(cfg["skew_head"], (int, float)) and 0 < cfg["skew_head"] < 1):
            raise CliError("skew_head must lie in (0, 1)")
        init = skewed_prior(len(candidates), float(cfg["skew_head"]))
    elif cfg["init"] == "uniform":
        init = None
    else:
        raise CliError(f"--init must be 'skewed' or 'uniform', got {cfg['init']!r}")
    run, h = _run_dir("experiment", cfg, glob)
    rep = convergence_experiment(model, ds, candidates, init, bacfg)
    _write(run, "trace.csv", rep.trace_csv())
    _write(run, "report.json", _dump_json({**rep.to_json(), "metadata": _metadata("experiment", cfg, glob, h)}))
    print(run)
    return EXIT_OK if rep.result.converged else EXIT_NOT_CONVERGED


HANDLERS = {
    "optimize": cmd_optimize,
    "bounds": cmd_bounds,
    "verify-equivalence": cmd_verify_equivalence,
    "glossy": cmd_glossy,
    "pushforward-check": cmd_pushforward,
    "synth-gen": cmd_synth,
    "experiment": cmd_experiment,
}


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--config", metavar="PATH", help="JSON file with parameters; flags override it")
    common.add_argument("--seed", type=int, metavar="U64", help="RNG seed (default 0)")
    common.add_argument("--out", metavar="DIR", help="base directory for run outputs (default ./runs)")
    common.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    common.add_argument("--no-timestamp", action="store_true", help="omit timestamps from reports")

    parser = _Parser(prog="rdlvm", description="Rate-distortion diagnostics for latent variable models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], argument_default=S)

    def ba_flags(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--gap-tol", type=float)
        p.add_argument("--prune-tol", type=float)

    def synth_flags(p):
        p.add_argument("--n-templates", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--flip-prob", type=float)
        p.add_argument("--n-train", type=int)
        p.add_argument("--n-val", type=int)
        p.add_argument("--n-test", type=int)
        p.add_argument("--templates", metavar="PATH", help="0/1-per-line template file")

    p = add("optimize", "optimize the prior by Blahut-Arimoto")
    p.add_argument("--lik", metavar="CSV")
    p.add_argument("--prior", metavar="JSON")
    ba_flags(p)

    p = add("bounds", "NLL upper/lower bounds and optimality certificate at a given prior")
    p.add_argument("--lik", metavar="CSV")
    p.add_argument("--prior", metavar="JSON")
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float)

    p = add("verify-equivalence", "check prior optimization against the rate-distortion Lagrangian")
    p.add_argument("--lik", metavar="CSV")
    ba_flags(p)

    p = add("glossy", "glossy statistics for a linear-Gaussian model")
    p.add_argument("--model", metavar="JSON")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--evidence", help="exact or iwae")
    p.add_argument("--k", type=int, help="IWAE samples per point")
    p.add_argument("--tol", type=float)

    p = add("pushforward-check", "compare a prior change with the equivalent likelihood change")
    p.add_argument("--model", metavar="JSON")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--mode")
    p.add_argument("--target-c", metavar="JSON", help="target prior factor as a JSON matrix")
    p.add_argument("--source", help="comma-separated scipy.stats names, e.g. uniform,norm")
    p.add_argument("--target", help="comma-separated scipy.stats names, e.g. norm,laplace")
    p.add_argument("--n-mc", type=int)

    p = add("synth-gen", "generate a template + bit-flip dataset")
    synth_flags(p)

    p = add("experiment", "BA bound-convergence experiment on synthetic data")
    synth_flags(p)
    p.add_argument("--dataset", metavar="JSON", help="dataset.json sidecar from synth-gen")
    p.add_argument("--distractors", type=int)
    p.add_argument("--drop", type=int, help="leave out the first N true templates")
    p.add_argument("--init")
    p.add_argument("--skew-head", type=float)
    ba_flags(p)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg, glob = _resolve(ns.command, ns)
        return HANDLERS[ns.command](cfg, glob)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (CliError, RdlvmError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # contract errors from numpy/scipy land here too
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
