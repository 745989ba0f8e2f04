"""Batch command line: ``hybridcert {certify,frontier,sweep,verify}``.

Exit codes: 0 success, 1 verification failure, 2 parameter error,
3 numeric error. Every artifact embeds the resolved configuration; passing
an artifact back through ``--config`` reproduces it.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import certified_radius, frontier
from .confidence import MonteCarloEstimate, clopper_pearson_lower
from .errors import HybridCertError, NumericError, ParameterError
from .harness import LinearClassifier, certified_accuracy_sweep, fit_linear_classifier
from .kernels import ABSORBING, L0_REPLACEMENT, SUFFIX_APPEND, UNIFORM, KernelParams, ThreatModel, build_groups
from .tabular import CSV_FILE, DatasetSpec, ingest_csv, make_synthetic_linear
from . import verify as verify_mod

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_PARAMETER = 2
EXIT_NUMERIC = 3

SEED_ENV = "HYBRIDCERT_SEED"
CONFIG_PREFIX = "# config: "
TIMESTAMP_PREFIX = "# generated_at: "


def _default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


_KERNEL_DEFAULTS = {
    "sigma": 1.0, "kernel": UNIFORM, "beta": 0.25, "vocab": 32000,
    "family": SUFFIX_APPEND, "tau": 0.5, "radius_tol": 1e-4, "threshold_tol": 1e-9,
    "r_max": None,
}

DEFAULTS = {
    "certify": {**_KERNEL_DEFAULTS, "pa": None, "n": None, "k": None, "alpha_risk": 0.01,
                "d": 0, "dump_groups": False, "output": None},
    "frontier": {**_KERNEL_DEFAULTS, "pa": None, "n": None, "k": None, "alpha_risk": 0.01,
                 "d_max": None, "d_list": None, "output": None, "plot_data": False, "workers": 1},
    "sweep": {"csv": None, "categorical": None, "continuous": None, "label": "label",
              "n_examples": 50, "cardinalities": [3, 4, 5], "n_continuous": 4,
              "kernel": UNIFORM, "beta": 0.25, "sigma": 0.5, "tau": 0.5, "d_list": [0, 1, 2],
              "eps_max": 3.0, "eps_step": 0.05, "n_samples": 2000, "alpha_risk": 0.01,
              "radius_tol": 1e-4, "threshold_tol": 1e-9, "r_max": None, "seed": None,
              "workers": 1, "output": None, "plot_data": False},
    "verify": {"quad_configs": 60, "mc_configs": 200, "mc_samples": 100_000,
               "knapsack_inputs": 10_000, "seed": None, "perturb_phi": 0.0, "json": False},
}


def _int_list(text):
    text = text.strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _str_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_kernel_args(p):
    p.add_argument("--sigma", type=float, help="Gaussian smoothing scale (standardized units)")
    p.add_argument("--kernel", choices=[UNIFORM, ABSORBING])
    p.add_argument("--beta", type=float, help="per-position corruption probability")
    p.add_argument("--vocab", type=int, help="vocabulary size (uniform kernel)")
    p.add_argument("--family", choices=[SUFFIX_APPEND, L0_REPLACEMENT])
    p.add_argument("--tau", type=float, help="certification threshold on the smoothed score")
    p.add_argument("--radius-tol", dest="radius_tol", type=float)
    p.add_argument("--threshold-tol", dest="threshold_tol", type=float)
    p.add_argument("--r-max", dest="r_max", type=float, help="radius search limit (default 50*sigma)")


def _add_pa_args(p):
    p.add_argument("--pa", type=float, help="lower confidence bound on the clean score")
    p.add_argument("--n", type=int, help="Monte Carlo sample count")
    p.add_argument("--k", type=int, help="Monte Carlo success count")
    p.add_argument("--alpha-risk", "--alpha", dest="alpha_risk", type=float,
                   help="Clopper-Pearson risk level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridcert", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config or a previous artifact; flags override it")

    p = sub.add_parser("certify", parents=[common], argument_default=argparse.SUPPRESS,
                       help="certified radius for one (p_A, d) pair")
    _add_pa_args(p)
    _add_kernel_args(p)
    p.add_argument("--d", type=int, help="discrete budget")
    p.add_argument("--dump-groups", dest="dump_groups", action="store_true")
    p.add_argument("--output", "-o")

    p = sub.add_parser("frontier", parents=[common], argument_default=argparse.SUPPRESS,
                       help="certified radius for each discrete budget")
    _add_pa_args(p)
    _add_kernel_args(p)
    p.add_argument("--d-max", dest="d_max", type=int)
    p.add_argument("--d-list", dest="d_list", type=_int_list, help="e.g. 0,1,2 or 0..3")
    p.add_argument("--workers", type=int)
    p.add_argument("--plot-data", dest="plot_data", action="store_true")
    p.add_argument("--output", "-o")

    p = sub.add_parser("sweep", parents=[common], argument_default=argparse.SUPPRESS,
                       help="certified accuracy over (d, epsilon) on tabular data")
    p.add_argument("--csv", help="input CSV (default: seeded synthetic linear data)")
    p.add_argument("--categorical", type=_str_list)
    p.add_argument("--continuous", type=_str_list)
    p.add_argument("--label")
    p.add_argument("--n-examples", dest="n_examples", type=int)
    p.add_argument("--cardinalities", type=_int_list)
    p.add_argument("--n-continuous", dest="n_continuous", type=int)
    p.add_argument("--kernel", choices=[UNIFORM, ABSORBING])
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--d-list", dest="d_list", type=_int_list)
    p.add_argument("--eps-max", dest="eps_max", type=float)
    p.add_argument("--eps-step", dest="eps_step", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--alpha-risk", "--alpha", dest="alpha_risk", type=float)
    p.add_argument("--radius-tol", dest="radius_tol", type=float)
    p.add_argument("--threshold-tol", dest="threshold_tol", type=float)
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--plot-data", dest="plot_data", action="store_true")
    p.add_argument("--output", "-o")

    p = sub.add_parser("verify", parents=[common], argument_default=argparse.SUPPRESS,
                       help="cross-check the engine against the brute-force oracles")
    p.add_argument("--quad-configs", dest="quad_configs", type=int)
    p.add_argument("--mc-configs", dest="mc_configs", type=int)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--knapsack-inputs", dest="knapsack_inputs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--perturb-phi", dest="perturb_phi", type=float, help=argparse.SUPPRESS)
    p.add_argument("--json", action="store_true")
    return parser


def load_config_file(path) -> dict:
    """Config values from a JSON file, a JSON artifact, or a CSV artifact."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from None
    for line in text.splitlines():
        if line.startswith(CONFIG_PREFIX):
            return json.loads(line[len(CONFIG_PREFIX):])
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config {path} is neither JSON nor a hybridcert artifact: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        return data["config"]
    if not isinstance(data, dict):
        raise ParameterError(f"config {path} must hold a JSON object")
    return data


def resolve_config(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    given = vars(ns).copy()
    given.pop("command", None)
    path = given.pop("config", None)
    if path is not None:
        file_cfg = dict(load_config_file(path))
        file_cmd = file_cfg.pop("command", command)
        if file_cmd != command:
            raise ParameterError(f"config was written by {file_cmd!r}, not {command!r}")
        for key in _NOT_EMBEDDED:
            file_cfg.pop(key, None)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ParameterError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(given)
    if "seed" in cfg and cfg["seed"] is None:
        # verify falls back to the frozen oracle grid rather than seed 0
        fallback = verify_mod.oracle.ORACLE_GRID_SEED if command == "verify" else 0
        cfg["seed"] = _default_seed(fallback)
    return cfg


# keys that choose where results go rather than what they are
_NOT_EMBEDDED = ("output",)


def _recorded(command, cfg) -> dict:
    return {"command": command, **{k: v for k, v in cfg.items() if k not in _NOT_EMBEDDED}}


def _embedded(command, cfg) -> str:
    return json.dumps(_recorded(command, cfg), sort_keys=True)


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, output) -> None:
    if output:
        write_atomic(output, text)
    else:
        sys.stdout.write(text)


def _csv_header(command, cfg) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return (f"# hybridcert {command} {__version__}\n"
            f"{TIMESTAMP_PREFIX}{stamp}\n"
            f"{CONFIG_PREFIX}{_embedded(command, cfg)}\n")


def _p_a_lower(cfg) -> float:
    has_pa = cfg.get("pa") is not None
    has_counts = cfg.get("n") is not None or cfg.get("k") is not None
    if has_pa and has_counts:
        raise ParameterError("give either --pa or --n/--k, not both")
    if has_pa:
        return float(cfg["pa"])
    if cfg.get("n") is None or cfg.get("k") is None:
        raise ParameterError("need --pa, or both --n and --k")
    return clopper_pearson_lower(MonteCarloEstimate(cfg["n"], cfg["k"], cfg["alpha_risk"]))


def _kernel(cfg) -> KernelParams:
    return KernelParams(cfg["kernel"], cfg["beta"], cfg["vocab"] if cfg["kernel"] == UNIFORM else None)


def cmd_certify(cfg) -> int:
    p_a = _p_a_lower(cfg)
    groups = build_groups(ThreatModel(cfg["family"], cfg["d"], _kernel(cfg)))
    res = certified_radius(p_a, cfg["sigma"], groups, cfg["tau"], cfg["radius_tol"],
                           cfg["threshold_tol"], cfg["r_max"])
    record = {
        "p_a_lower": p_a,
        "d": cfg["d"],
        "certified": res.certified,
        "radius": res.certified_radius,
        "worst_case_value": res.worst_case_value_at_radius,
        "bracket_limited": res.bracket_limited,
        "tolerances": {"radius": res.radius_tolerance, "threshold": res.threshold_tolerance},
        "config": _recorded("certify", cfg),
    }
    if cfg["dump_groups"]:
        record["groups"] = groups.to_records()
    _emit(json.dumps(record, indent=2, sort_keys=True) + "\n", cfg["output"])
    return EXIT_OK


def cmd_frontier(cfg) -> int:
    if cfg["d_list"] is not None:
        d_values = sorted(set(int(d) for d in cfg["d_list"]))
    elif cfg["d_max"] is not None:
        if cfg["d_max"] < 0:
            raise ParameterError("--d-max must be nonnegative")
        d_values = list(range(cfg["d_max"] + 1))
    else:
        raise ParameterError("need --d-max or --d-list")
    if not d_values:
        raise ParameterError("the d list is empty")
    p_a = _p_a_lower(cfg)
    entries = frontier(p_a, cfg["sigma"], _kernel(cfg), cfg["family"], d_values, cfg["tau"],
                       cfg["radius_tol"], cfg["threshold_tol"], cfg["r_max"],
                       max_workers=cfg["workers"])
    lines = [_csv_header("frontier", cfg)]
    if cfg["plot_data"]:
        lines.append("series,x,y\n")
        lines.extend(f"radius,{d},{r.certified_radius!r}\n" for d, r in entries)
    else:
        lines.append("d,radius,certified,worst_case_value\n")
        lines.extend(f"{d},{r.certified_radius!r},{str(r.certified).lower()},"
                     f"{r.worst_case_value_at_radius!r}\n" for d, r in entries)
    _emit("".join(lines), cfg["output"])
    return EXIT_OK


def _epsilon_grid(cfg):
    step, top = cfg["eps_step"], cfg["eps_max"]
    if not (step > 0 and top >= 0):
        raise ParameterError("--eps-step must be positive and --eps-max nonnegative")
    n = int(np.floor(top / step + 1e-9)) + 1
    return [round(i * step, 12) for i in range(n)]


def cmd_sweep(cfg) -> int:
    if cfg["csv"]:
        if not cfg["categorical"] and not cfg["continuous"]:
            raise ParameterError("--csv needs --categorical and/or --continuous columns")
        spec = DatasetSpec(CSV_FILE, cfg["categorical"] or [], cfg["continuous"] or [], cfg["label"])
        dataset = ingest_csv(cfg["csv"], spec)
        if len(dataset) > cfg["n_examples"]:
            idx = np.random.default_rng(cfg["seed"]).choice(len(dataset), cfg["n_examples"], replace=False)
            idx.sort()
            full = dataset
            dataset = type(full)(full.categorical[idx], full.continuous[idx], full.labels[idx],
                                 full.schema, full.dropped_rows)
            classifier = fit_linear_classifier(full)
        else:
            classifier = fit_linear_classifier(dataset)
    else:
        dataset, weights = make_synthetic_linear(cfg["n_examples"], cfg["seed"],
                                                 cfg["cardinalities"], cfg["n_continuous"])
        classifier = LinearClassifier.from_weights(weights)
    table = certified_accuracy_sweep(
        dataset, classifier, cfg["kernel"], cfg["beta"], cfg["sigma"], cfg["tau"],
        cfg["d_list"], _epsilon_grid(cfg), cfg["n_samples"], cfg["alpha_risk"], cfg["seed"],
        radius_tolerance=cfg["radius_tol"], threshold_tolerance=cfg["threshold_tol"],
        r_max=cfg["r_max"], max_workers=cfg["workers"],
    )
    out = [_csv_header("sweep", cfg)]
    if cfg["plot_data"]:
        out.append("series,x,y\n")
        out.extend(f"{d},{eps!r},{frac!r}\n" for d, eps, frac in table.rows)
    else:
        out.append(table.to_csv())
    _emit("".join(out), cfg["output"])
    return EXIT_OK


def cmd_verify(cfg) -> int:
    if cfg["mc_samples"] < 1:
        raise ParameterError("--mc-samples must be positive")
    results = verify_mod.run_all(cfg["quad_configs"], cfg["mc_configs"], cfg["mc_samples"],
                                 cfg["knapsack_inputs"], cfg["seed"], cfg["perturb_phi"])
    if cfg["json"]:
        sys.stdout.write(json.dumps({"checks": [r.to_dict() for r in results],
                                     "config": _recorded("verify", cfg)}, indent=2) + "\n")
    else:
        for r in results:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


COMMANDS = {"certify": cmd_certify, "frontier": cmd_frontier, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except NumericError as exc:
        print(f"hybridcert: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, HybridCertError) as exc:
        print(f"hybridcert: {exc}", file=sys.stderr)
        return EXIT_PARAMETER


if __name__ == "__main__":
    sys.exit(main())
