"""Command-line frontend: ``covflow {spectrum,bounds,single-block,deep,validate}``.

Configuration is layered as built-in defaults, then the ``--config`` JSON
document (flat keys; a run manifest is accepted too), then explicit flags.
Exit codes: 0 success, 1 runtime or I/O error, 2 usage error, 3 validation
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import PrecisionPolicy, bound_report, deep_bound
from .errors import CovflowError
from .experiments import (
    ALL_BOUNDS,
    ExperimentConfig,
    build_deep_spectra,
    compare_bounds_per_layer,
    resolve_workers,
    run_deep,
    run_single_block,
)
from .linalg_core import Spectrum
from .spectra import (
    DATASET_KINDS,
    PARAMETRIC_KINDS,
    SpectrumFamily,
    dataset_spectrum,
    distinctness_perturb,
    generate_dataset_family,
    generate_parametric,
    load_spectra,
    scale_schedule,
    scale_spectrum,
    spectra_to_json,
)
from .validation import run_oracle_suite

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2, 3

SCHEMAS = {
    "bounds": "covflow-bounds/1",
    "single-block": "covflow-single-block/1",
    "deep": "covflow-deep/1",
    "bounds-per-layer": "covflow-bounds-per-layer/1",
    "validate": "covflow-validate/1",
}

SINGLE_BLOCK_COLUMNS = ["spectrum_id", "scale_s", "s_before", "group", "mc_mean", "mc_median", "mc_iqr",
                        "thm1", "thm1_bits", "thm2_varmax", "thm2_lossonly", "gamma"]
DEEP_COLUMNS = ["instance", "rotation_seed", "layer", "s_value", "ratio", "terminated_early"]
BOUNDS_COLUMNS = ["spectrum_id", "dim", "s_before", "geometric_mean", "var_lambda", "lambda_min", "lambda_max",
                  "thm1", "thm1_bits", "thm2_varmax", "thm2_lossonly", "gamma", "layers", "deep_bound"]
VALIDATE_COLUMNS = ["check", "passed", "estimate", "expected", "tolerance"]

COMMON_DEFAULTS = {"seed": 0, "out_dir": "."}
DEFAULTS = {
    "spectrum": {"family": None, "dim": 8, "p": 1.0, "value": None, "n_vary": 16, "v_max": 1000.0,
                 "scale": None, "epsilon": None},
    "bounds": {"spectra_file": None, "values": None, "family": None, "dim": 8, "p": 1.0, "value": None,
               "scale": None, "epsilon": None, "layers": 16, "bounds": list(ALL_BOUNDS),
               "start_bits": 256, "max_bits": 8192},
    "single-block": {"spectra": ["power:2", "power:8"], "spectra_file": None, "dim": 8, "n_rot": 100,
                     "n_scale": 150, "group": "both", "bounds": list(ALL_BOUNDS), "epsilon": None,
                     "start_bits": 256, "max_bits": 8192},
    "deep": {"spectra_file": None, "dim": 16, "layers": 16, "n_rot": 8, "n_vary": 16, "v_max": 1000.0,
             "epsilon": 1e-5, "families": list(DATASET_KINDS), "group": "orthogonal",
             "stop_threshold": 1e-9, "independent_rotations": False, "retain_spectra": False,
             "bounds": list(ALL_BOUNDS), "start_bits": 256, "max_bits": 8192},
    "validate": {"quick": False},
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output


def fmt(v) -> str:
    """Locale-independent shortest round-trip text for a CSV cell."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, schema: str, columns: list[str], rows) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema: {schema}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path: Path) -> tuple[str, list[dict]]:
    """Schema tag and rows (as strings) of a file written by ``write_csv``."""
    with Path(path).open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        rows = list(csv.DictReader(fh))
    return header.removeprefix("# schema: "), rows


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON config; the output directory is not part of it."""
    config = {k: v for k, v in config.items() if k != "out_dir"}
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, config: dict, outputs: list[Path], started: str) -> Path:
    doc = {
        "command": command,
        "config_hash": config_hash(config),
        "tool_version": __version__,
        "seed": config["seed"],
        "timestamps": {"started": started, "finished": _now()},
        "outputs": [p.name for p in outputs],
        "config": config,
    }
    path = out_dir / f"{command}_manifest.json"
    try:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# ------------------------------------------------------------ config merge


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    if "config" in doc and "config_hash" in doc:
        doc = doc["config"]
    return doc


def merge_config(command: str, file_cfg: dict, flags: dict) -> dict:
    allowed = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    unknown = sorted(set(file_cfg) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {**allowed, **file_cfg, **{k: v for k, v in flags.items() if k in allowed}}
    return cfg


# --------------------------------------------------------------- spectra


def _perturb(spec: Spectrum, eps) -> Spectrum:
    return distinctness_perturb(spec, eps) if eps else spec


def spectra_from_config(cfg: dict) -> tuple[list[str], list[Spectrum]]:
    """Spectra named by an inline ``values`` list, a ``spectra_file`` or a ``family``."""
    if cfg.get("values"):
        vals = cfg["values"]
        if isinstance(vals, str):
            vals = [float(x) for x in vals.split(",") if x.strip()]
        ids, specs = ["inline"], [Spectrum(np.asarray(vals, dtype=float))]
    elif cfg.get("spectra_file"):
        ids, specs = load_spectra(cfg["spectra_file"])
    elif cfg.get("family"):
        ids, specs = family_spectra(cfg)
    else:
        raise UsageError("give one of --values, --spectra-file or --family")
    if cfg.get("scale") is not None:
        specs = [scale_spectrum(s, float(cfg["scale"])) for s in specs]
    specs = [_perturb(s, cfg.get("epsilon")) for s in specs]
    return ids, specs


def family_spectra(cfg: dict) -> tuple[list[str], list[Spectrum]]:
    kind, dim = cfg["family"], int(cfg["dim"])
    if kind in PARAMETRIC_KINDS:
        fam = SpectrumFamily(kind, dim, {"p": float(cfg["p"])} if kind == "power" else {})
        return [fam.label], [generate_parametric(fam)]
    if kind in DATASET_KINDS:
        if cfg.get("value") is not None and kind not in ("uniform-random", "log-uniform-random"):
            spec = dataset_spectrum(kind, dim, float(cfg["value"]))
            if np.allclose(spec.values, 1.0, rtol=0, atol=1e-12):
                raise UsageError("the all-ones spectrum is excluded from the dataset families")
            return [f"{kind}-v{cfg['value']:g}"], [spec]
        specs = generate_dataset_family(kind, dim, int(cfg["n_vary"]), float(cfg["v_max"]),
                                        rng=(int(cfg["seed"]), 10_000 + DATASET_KINDS.index(kind)))
        return [f"{kind}-{k}" for k in range(len(specs))], specs
    if kind == "identity":
        raise UsageError("family 'identity' is rejected: the all-ones spectrum is already standard")
    raise UsageError(f"unknown family {kind!r}; choose from {', '.join(PARAMETRIC_KINDS + DATASET_KINDS)}")


def parse_family_token(token: str) -> tuple[str, dict]:
    kind, _, arg = token.partition(":")
    if kind not in PARAMETRIC_KINDS:
        raise UsageError(f"unknown parametric family {kind!r} in {token!r}")
    params = {"p": float(arg)} if kind == "power" and arg else {}
    return kind, params


# -------------------------------------------------------------- commands


def _policy(cfg) -> PrecisionPolicy:
    return PrecisionPolicy(int(cfg["start_bits"]), int(cfg["max_bits"]))


def _bound_cell(value, note):
    return f"n/a: {note}" if value is None and note else value


def cmd_spectrum(cfg: dict, out_dir: Path) -> list[Path]:
    if cfg.get("family") is None:
        raise UsageError("spectrum needs --family")
    ids, specs = spectra_from_config(cfg)
    path = out_dir / "spectra.json"
    try:
        path.write_text(spectra_to_json(specs, ids) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    print("id S g var_lambda lambda_min lambda_max")
    for i, s in zip(ids, specs):
        print(i, *(fmt(x) for x in (s.non_standardness, s.geometric_mean, s.variance, s.lambda_min, s.lambda_max)))
    return [path]


def bounds_rows(ids, specs, cfg) -> list[dict]:
    rows = []
    layers = int(cfg["layers"])
    for sid, spec in zip(ids, specs):
        rep = bound_report(spec, _policy(cfg), tuple(cfg["bounds"]))
        notes = rep.notes
        try:
            db = deep_bound(rep.s_before, spec.dim, layers)
        except CovflowError as exc:
            db = f"n/a: {exc.code}"
        row = {
            "spectrum_id": sid, "dim": spec.dim, "s_before": rep.s_before,
            "geometric_mean": rep.geometric_mean, "var_lambda": rep.var_lambda,
            "lambda_min": rep.lambda_min, "lambda_max": rep.lambda_max,
            "thm1_bits": rep.precision_bits_used, "gamma": rep.gamma, "layers": layers, "deep_bound": db,
        }
        if "thm1" in cfg["bounds"]:
            row["thm1"] = _bound_cell(rep.thm1_bound, notes.get("thm1"))
        if "thm2_varmax" in cfg["bounds"]:
            row["thm2_varmax"] = _bound_cell(rep.thm2_varmax, notes.get("thm2"))
        if "thm2_lossonly" in cfg["bounds"]:
            row["thm2_lossonly"] = _bound_cell(rep.thm2_lossonly, notes.get("thm2"))
        rows.append(row)
    return rows


def cmd_bounds(cfg: dict, out_dir: Path) -> list[Path]:
    ids, specs = spectra_from_config(cfg)
    rows = bounds_rows(ids, specs, cfg)
    return [write_csv(out_dir / "bounds.csv", SCHEMAS["bounds"], BOUNDS_COLUMNS, rows)]


def _experiment_config(cfg: dict, **extra) -> ExperimentConfig:
    keys = {"dim", "layers", "n_rot", "group", "seed", "stop_threshold", "n_scale", "n_vary", "v_max",
            "independent_rotations", "retain_spectra", "start_bits", "max_bits"}
    kw = {k: cfg[k] for k in keys if k in cfg}
    if cfg.get("epsilon"):
        kw["epsilon"] = cfg["epsilon"]
    if "families" in cfg:
        kw["families"] = tuple(cfg["families"])
    kw["bound_set"] = tuple(cfg["bounds"])
    kw["workers"] = resolve_workers()
    kw.update(extra)
    return ExperimentConfig(**kw)


def single_block_inputs(cfg: dict):
    if cfg.get("spectra_file"):
        ids, bases = load_spectra(cfg["spectra_file"])
        bases = [Spectrum.normalize(b.values) for b in bases]
    else:
        ids, bases = [], []
        for token in cfg["spectra"]:
            kind, params = parse_family_token(token)
            fam = SpectrumFamily(kind, int(cfg["dim"]), params)
            ids.append(fam.label)
            bases.append(generate_parametric(fam))
    bases = [_perturb(b, cfg.get("epsilon")) for b in bases]
    if any(b.dim != int(cfg["dim"]) for b in bases):
        raise UsageError("all single-block spectra must have dimension --dim")
    return [(i, b, scale_schedule(b, int(cfg["n_scale"]))) for i, b in zip(ids, bases)]


def single_block_rows(records) -> list[dict]:
    rows = []
    for rec in records:
        for group, st in rec.stats.items():
            row = {"spectrum_id": rec.spectrum_id, "scale_s": rec.scale_s, "s_before": rec.s_before,
                   "group": group, "mc_mean": st.mean, "mc_median": st.median, "mc_iqr": st.iqr,
                   "thm1_bits": rec.thm1_bits}
            for b in ("thm1", "thm2_varmax", "thm2_lossonly", "gamma"):
                if b in rec.bound_values:
                    note = rec.bound_notes.get("thm2" if b.startswith("thm2") else b)
                    row[b] = _bound_cell(rec.bound_values[b], note)
            rows.append(row)
    return rows


def cmd_single_block(cfg: dict, out_dir: Path) -> list[Path]:
    config = _experiment_config(cfg)
    records = run_single_block(config, single_block_inputs(cfg))
    return [write_csv(out_dir / "single_block.csv", SCHEMAS["single-block"], SINGLE_BLOCK_COLUMNS,
                      single_block_rows(records))]


def deep_rows(trajectories) -> list[dict]:
    rows = []
    for t in trajectories:
        for layer, s in enumerate(t.s_values):
            ratio = t.ratios[layer - 1] if 1 <= layer <= len(t.ratios) else None
            rows.append({"instance": t.instance_id, "rotation_seed": t.rotation_seed, "layer": layer,
                         "s_value": s, "ratio": ratio, "terminated_early": t.terminated_early})
    return rows


def cmd_deep(cfg: dict, out_dir: Path) -> list[Path]:
    config = _experiment_config(cfg)
    if cfg.get("spectra_file"):
        ids, specs = load_spectra(cfg["spectra_file"])
        spectra = [(i, _perturb(Spectrum.normalize(s.values), cfg.get("epsilon"))) for i, s in zip(ids, specs)]
    else:
        spectra = build_deep_spectra(config)
    trajectories = run_deep(config, spectra)
    outputs = [write_csv(out_dir / "deep.csv", SCHEMAS["deep"], DEEP_COLUMNS, deep_rows(trajectories))]
    if config.retain_spectra:
        table = compare_bounds_per_layer(trajectories, bound_set=config.bound_set,
                                         stop_threshold=config.stop_threshold, policy=config.policy)
        cols = list(table[0].keys()) if table else ["block", "n", "mean_ratio", "iqr_ratio"]
        outputs.append(write_csv(out_dir / "bounds_per_layer.csv", SCHEMAS["bounds-per-layer"], cols, table))
    return outputs


def cmd_validate(cfg: dict, out_dir: Path) -> tuple[list[Path], bool]:
    results = run_oracle_suite(quick=bool(cfg["quick"]), seed=int(cfg["seed"]))
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    rows = [{"check": r.name, "passed": r.passed, "estimate": r.estimate, "expected": r.expected,
             "tolerance": r.tolerance} for r in results]
    path = write_csv(out_dir / "validate.csv", SCHEMAS["validate"], VALIDATE_COLUMNS, rows)
    return [path], n_fail == 0


COMMANDS = {"spectrum": cmd_spectrum, "bounds": cmd_bounds, "single-block": cmd_single_block,
            "deep": cmd_deep, "validate": cmd_validate}


# ---------------------------------------------------------------- parser


def _flag(p, name, **kw):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), default=argparse.SUPPRESS, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"covflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        _flag(p, "seed", type=int, help="global seed (default 0)")
        _flag(p, "out-dir", help="output directory (default .)")
        p.add_argument("--config", default=None, help="flat JSON config; flags override its values")

    def spectrum_source(p):
        _flag(p, "family", help="parametric or dataset family name")
        _flag(p, "dim", type=int)
        _flag(p, "p", type=float, help="exponent of the power family")
        _flag(p, "value", type=float, help="varied value for a deterministic dataset family")
        _flag(p, "n-vary", type=int)
        _flag(p, "v-max", type=float)
        _flag(p, "scale", type=float, help="pull toward identity: lam = (nu - 1) s + 1")
        _flag(p, "epsilon", type=float, help="distinctness perturbation size")

    p = sub.add_parser("spectrum", help="generate spectra and write them as JSON")
    common(p)
    spectrum_source(p)

    p = sub.add_parser("bounds", help="evaluate the non-Standardness bounds for given spectra")
    common(p)
    spectrum_source(p)
    _flag(p, "spectra-file", help="spectra JSON file")
    _flag(p, "values", help="comma-separated eigenvalues")
    _flag(p, "layers", type=int, help="depth for the deep-bound column")
    _flag(p, "bounds", nargs="+", choices=ALL_BOUNDS)
    _flag(p, "start-bits", type=int)
    _flag(p, "max-bits", type=int)

    p = sub.add_parser("single-block", help="rotation-averaged S after one block across scales")
    common(p)
    _flag(p, "spectra", nargs="+", help="parametric families, e.g. power:2 power:8 reciprocal exponential")
    _flag(p, "spectra-file", help="base spectra JSON file")
    _flag(p, "dim", type=int)
    _flag(p, "n-rot", type=int)
    _flag(p, "n-scale", type=int)
    _flag(p, "group", choices=("orthogonal", "unitary", "both"))
    _flag(p, "bounds", nargs="+", choices=ALL_BOUNDS)
    _flag(p, "epsilon", type=float)
    _flag(p, "start-bits", type=int)
    _flag(p, "max-bits", type=int)

    p = sub.add_parser("deep", help="multi-layer rotation and whitening experiment")
    common(p)
    _flag(p, "spectra-file", help="initial spectra JSON (default: the toy dataset families)")
    _flag(p, "dim", type=int)
    _flag(p, "layers", type=int)
    _flag(p, "n-rot", type=int)
    _flag(p, "n-vary", type=int)
    _flag(p, "v-max", type=float)
    _flag(p, "epsilon", type=float)
    _flag(p, "families", nargs="+", choices=DATASET_KINDS)
    _flag(p, "group", choices=("orthogonal", "unitary"))
    _flag(p, "stop-threshold", type=float)
    _flag(p, "independent-rotations", action="store_true")
    _flag(p, "retain-spectra", action="store_true", help="keep per-layer spectra and write the bound table")
    _flag(p, "bounds", nargs="+", choices=ALL_BOUNDS)
    _flag(p, "start-bits", type=int)
    _flag(p, "max-bits", type=int)

    p = sub.add_parser("validate", help="run the closed-form versus Monte Carlo oracle suite")
    common(p)
    _flag(p, "quick", action="store_true", help="smaller sample sizes")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    command = args.command
    started = _now()
    try:
        cfg = merge_config(command, load_config_file(args.config), flags)
        out_dir = Path(cfg["out_dir"])
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
        passed = True
        try:
            result = COMMANDS[command](cfg, out_dir)
        except (CovflowError, ValueError) as exc:
            # invalid spectra, dimensions or parameters
            raise UsageError(str(exc)) from exc
        if command == "validate":
            result, passed = result
        write_manifest(out_dir, command, cfg, result, started)
    except UsageError as exc:
        print(f"covflow {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"covflow {command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"covflow {command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if passed else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
