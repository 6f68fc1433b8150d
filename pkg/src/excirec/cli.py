"""Command-line entry point: ``excirec <command> --config FILE [--threads K] [--out DIR]``.

Every command reads one JSON document validated against the schema of that
command. ``--config preset:NAME`` loads a shipped preset. The environment
variable ``EXCIREC_SEED`` overrides ``master_seed``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical error,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import baseline as bl
from . import dataset as ds_mod
from . import pipeline
from .errors import (ConvergenceError, DegenerateOutputError, DomainError, ExcirecError, FormatError,
                     InvalidConfigError, InvalidInputError, NumericalError, SingularityError, TrainingError)
from .exciton import build_geometry, build_hamiltonian
from .eigen import diagonalize
from .localfield import LocalFieldSystem, MolecularResonance, TipModel
from .nearfield import FrequencyMap, build_scan, read_spectrum_csv, write_map_csv
from .nn import checkpoint
from .nn.train import predict, write_history_csv
from .seeding import derive_seed

log = logging.getLogger("excirec")

SCHEMA_VERSION = 1
COMMANDS = ("generate", "train", "evaluate", "predict", "localfield", "baseline")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NONCONVERGED = 0, 2, 3, 4


class ConfigError(ExcirecError):
    """Config failed schema validation; ``pointer`` is a JSON pointer to the culprit."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


# -- schema ------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}

_GEOMETRY = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["chain", "array2d"]},
        "n": _INT1, "spacing": _POS, "dipole": _VEC3,
        "nx": _INT1, "ny": _INT1, "spacing_x": _POS, "spacing_y": _POS, "theta_deg": _NUM,
        "dipoles": {"type": "array", "items": _VEC3, "minItems": 1},
        "mu": _POS,
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "chain"}}},
         "then": {"required": ["n"],
                  "propertyNames": {"enum": ["kind", "n", "spacing", "dipole", "dipoles", "mu"]}}},
        {"if": {"properties": {"kind": {"const": "array2d"}}},
         "then": {"required": ["nx", "ny"],
                  "propertyNames": {"enum": ["kind", "nx", "ny", "spacing_x", "spacing_y",
                                             "theta_deg", "dipoles", "mu"]}}},
    ],
}

_SCAN = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["line", "grid"]},
        "n_tip": _INT1, "span": _POS, "z_dip": _POS, "dip_moment": _VEC3,
        "nx": _INT1, "ny": _INT1, "margin": _NONNEG,
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "line"}}, "required": ["kind"]},
         "then": {"propertyNames": {"enum": ["kind", "n_tip", "span", "z_dip", "dip_moment"]}}},
        {"if": {"properties": {"kind": {"const": "grid"}}, "required": ["kind"]},
         "then": {"propertyNames": {"enum": ["kind", "nx", "ny", "margin", "z_dip", "dip_moment"]}}},
    ],
}

_SIGMAS = {"type": "array", "items": _NONNEG}

_ENSEMBLE = {
    "type": "object",
    "required": ["geometry"],
    "properties": {
        "geometry": _GEOMETRY, "scan": _SCAN, "sigma_d": _SIGMAS, "sigma_od": _SIGMAS,
        "realizations": _INT1, "noise_sigma": _NONNEG,
        "split_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "additionalProperties": False,
}

_TRAIN = {
    "type": "object",
    "properties": {
        "epochs": _INT1, "batch_size": _INT1, "learning_rate": _POS,
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "epsilon": _POS, "seed": {"type": "integer", "minimum": 0}, "noise_sigma": _NONNEG,
        "lr_schedule": {"enum": ["constant", "cosine"]}, "lr_min": _NONNEG,
    },
    "additionalProperties": False,
}

_LAYER = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["conv", "relu", "pool", "flatten", "dense"]},
        "kernel": _INT1, "channels": _INT1, "stride": _INT1, "width": _INT1,
        "mode": {"const": "avg"}, "units": _INT1,
    },
    "additionalProperties": False,
}

_NETWORK = {
    "type": ["object", "null"],
    "required": ["input_shape", "layers", "output_dim"],
    "properties": {
        "input_shape": {"type": "array", "items": _INT1, "minItems": 1, "maxItems": 2},
        "layers": {"type": "array", "items": _LAYER, "minItems": 1},
        "output_dim": _INT1,
    },
    "additionalProperties": False,
}

_HISTOGRAM = {
    "type": "object",
    "properties": {"bins": _INT1, "min": _POS, "max": _POS},
    "additionalProperties": False,
}

_COMMON = {
    "schema_version": {"const": SCHEMA_VERSION},
    "master_seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string", "minLength": 1},
    "description": {"type": "string"},
}


def _command_schema(name, required, props):
    return {
        "type": "object",
        "required": ["schema_version", "command", "master_seed", *required],
        "properties": {**_COMMON, "command": {"const": name}, **props},
        "additionalProperties": False,
    }


SCHEMAS = {
    "generate": _command_schema("generate", ["ensemble"], {
        "ensemble": _ENSEMBLE, "split": {"type": "boolean"}}),
    "train": _command_schema("train", ["ensemble", "train"], {
        "ensemble": _ENSEMBLE, "train": _TRAIN, "network": _NETWORK,
        "cache_dir": {"type": "string", "minLength": 1}}),
    "evaluate": _command_schema("evaluate", ["checkpoint", "test"], {
        "checkpoint": {"type": "string"}, "test": _ENSEMBLE, "histogram": _HISTOGRAM}),
    "predict": _command_schema("predict", ["checkpoint"], {
        "checkpoint": {"type": "string"},
        "spectrum": {"type": "string"},
        "eigenstate": {
            "type": "object", "required": ["geometry", "index"],
            "properties": {"geometry": _GEOMETRY, "scan": _SCAN,
                           "index": {"type": "integer", "minimum": 0}},
            "additionalProperties": False},
        "truth": {"type": "array", "items": _NUM, "minItems": 1},
        "normalize": {"type": "boolean"},
    }),
    "localfield": _command_schema("localfield", ["geometry", "checkpoint"], {
        "geometry": _GEOMETRY, "checkpoint": {"type": "string"},
        "resonance": {"type": "object", "properties": {"omega_m": _POS, "gamma_m": _POS, "mu": _POS},
                      "additionalProperties": False},
        "tip": {"type": ["object", "null"],
                "properties": {"radius": _POS, "eps_b": _NUM, "eps_env": _POS, "omega_p": _POS,
                               "gamma_p": _POS, "v_f": _NONNEG},
                "additionalProperties": False},
        "spacing": _POS, "gap": _NONNEG,
        "scan": {"type": "object", "properties": {"kind": {"const": "line"}, "n_tip": _INT1, "span": _POS},
                 "additionalProperties": False},
        "frequency": {"type": "object", "properties": {"n_omega": {"type": "integer", "minimum": 3},
                                                        "pad": _NONNEG},
                      "additionalProperties": False},
        "peaks": {"type": "object", "properties": {"prominence": _NONNEG, "min_separation": _INT1},
                  "additionalProperties": False},
        "write_map": {"type": "boolean"},
    }),
    "baseline": _command_schema("baseline", ["methods"], {
        "geometry": _GEOMETRY, "scan": _SCAN,
        "methods": {"type": "array", "minItems": 1, "uniqueItems": True,
                    "items": {"enum": list(bl.METHODS)}},
        "states": {"oneOf": [{"const": "all"},
                             {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}]},
        "max_iterations": _INT1, "target_cost": _NONNEG,
        "quadratic": {"type": "object", "required": ["center"],
                      "properties": {"center": {"type": "array", "items": _NUM, "minItems": 1},
                                     "weights": {"type": "array", "items": _POS, "minItems": 1}},
                      "additionalProperties": False},
    }),
}


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_config(doc) -> dict:
    """Validate a run config; raise :class:`ConfigError` with a JSON pointer on failure."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}", "/schema_version")
    name = doc.get("command")
    if name not in SCHEMAS:
        raise ConfigError(f"command must be one of {list(COMMANDS)}", "/command")
    validator = jsonschema.Draft202012Validator(SCHEMAS[name])
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _pointer(err.absolute_path))
    if name == "predict" and ("spectrum" in doc) == ("eigenstate" in doc):
        raise ConfigError("exactly one of 'spectrum' and 'eigenstate' is required")
    return doc


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("excirec.presets").iterdir()
                  if p.name.endswith(".json"))


def load_config(source: str) -> dict:
    if source.startswith("preset:"):
        name = source[len("preset:"):]
        path = resources.files("excirec.presets") / f"{name}.json"
        if not path.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
        text = path.read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    env = os.environ.get("EXCIREC_SEED")
    if env is not None and isinstance(doc, dict):
        try:
            doc["master_seed"] = int(env)
        except ValueError:
            raise ConfigError(f"EXCIREC_SEED must be an integer, got {env!r}", "/master_seed") from None
    return validate_config(doc)


# -- output helpers ------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out: Path, config: dict, files: list[str], summary: dict | None = None):
    doc = {"excirec_version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
           "config": config, "files": {f: _sha256(out / f) for f in files}}
    if summary is not None:
        doc["summary"] = summary
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def _ensemble(cfg: dict, master_seed: int) -> ds_mod.EnsembleConfig:
    return ds_mod.EnsembleConfig(**cfg, master_seed=master_seed)


def _load_checkpoint(path):
    try:
        net, _ = checkpoint.load(path)
    except FileNotFoundError:
        raise InvalidInputError(f"checkpoint {path} not found; train a model first") from None
    return net


# -- commands ------------------------------------------------------------------

def cmd_generate(cfg: dict, out: Path) -> int:
    ens = _ensemble(cfg["ensemble"], cfg["master_seed"])
    data = ds_mod.generate_ensemble(ens)
    files = ["dataset.exds"]
    ds_mod.save(data, out / "dataset.exds")
    counts = {"samples": data.n_samples}
    if cfg.get("split", True):
        train_set, val_set = ds_mod.split(data, ens.split_fraction,
                                          derive_seed(ens.master_seed, pipeline.SPLIT_TAG))
        ds_mod.save(train_set, out / "train.exds")
        ds_mod.save(val_set, out / "val.exds")
        files += ["train.exds", "val.exds"]
        counts.update(train=train_set.n_samples, validation=val_set.n_samples)
    ds_mod.write_manifest(out / "manifest.json", cfg, {f[:-5]: out / f for f in files})
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    job = pipeline.job_from_config(cfg)
    cache = Path(cfg.get("cache_dir", out / "cache"))
    res = pipeline.run_training(job, cache)
    checkpoint.save(res.network, out / "model.exnn", {"history": res.history, "job": job.to_dict()})
    write_history_csv(out / "history.csv", res.history)
    best = min(res.history, key=lambda r: r["val_loss"]) if res.history else {}
    summary = {"run_key": job.key(), "cached": res.cached, "epochs": len(res.history),
               "best_val_loss": best.get("val_loss")}
    _write_manifest(out, cfg, ["model.exnn", "history.csv"], summary)
    print(f"best validation loss {summary['best_val_loss']:.4e} over {summary['epochs']} epochs"
          + (" (cached)" if res.cached else ""))
    return EXIT_OK


def loss_histogram(losses, bins=40, lo=1e-6, hi=0.5):
    """Counts on log-spaced bins; losses outside ``[lo, hi]`` land in the end bins."""
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(losses, lo, hi), edges)
    return edges, counts


def cmd_evaluate(cfg: dict, out: Path) -> int:
    net = _load_checkpoint(cfg["checkpoint"])
    test = dict(cfg["test"])
    test.setdefault("split_fraction", 0.5)
    data = ds_mod.generate_ensemble(_ensemble(test, cfg["master_seed"]))
    losses = pipeline.evaluate_losses(net, data)
    m = data.meta
    _write_rows(out / "losses.csv", ["sigma_d", "sigma_od", "realization", "state", "loss"],
                ([_fmt(m["sigma_d"][i]), _fmt(m["sigma_od"][i]), int(m["realization"][i]),
                  int(m["state"][i]), _fmt(losses[i])] for i in range(len(losses))))
    h = {"bins": 40, "min": 1e-6, "max": 0.5, **cfg.get("histogram", {})}
    hist_rows, state_rows, summary = [], [], []
    tranches = sorted({(float(a), float(b)) for a, b in zip(m["sigma_d"], m["sigma_od"])})
    for sd, so in tranches:
        sel = (m["sigma_d"] == sd) & (m["sigma_od"] == so)
        edges, counts = loss_histogram(losses[sel], h["bins"], h["min"], h["max"])
        hist_rows += [[_fmt(sd), _fmt(so), _fmt(edges[i]), _fmt(edges[i + 1]), int(counts[i])]
                      for i in range(len(counts))]
        for s in range(data.n_sites):
            ls = losses[sel & (m["state"] == s)]
            state_rows.append([_fmt(sd), _fmt(so), s, _fmt(ls.mean()), _fmt(np.median(ls))])
        summary.append({"sigma_d": sd, "sigma_od": so, "samples": int(sel.sum()),
                        "mean_loss": float(losses[sel].mean()), "median_loss": float(np.median(losses[sel]))})
    _write_rows(out / "histogram.csv", ["sigma_d", "sigma_od", "bin_lo", "bin_hi", "count"], hist_rows)
    _write_rows(out / "state_loss.csv", ["sigma_d", "sigma_od", "state", "mean_loss", "median_loss"],
                state_rows)
    _write_manifest(out, cfg, ["losses.csv", "histogram.csv", "state_loss.csv"], {"tranches": summary})
    for t in summary:
        print(f"sigma_d={t['sigma_d']:g} sigma_od={t['sigma_od']:g}: n={t['samples']} "
              f"mean={t['mean_loss']:.3e} median={t['median_loss']:.3e}")
    return EXIT_OK


def cmd_predict(cfg: dict, out: Path) -> int:
    net = _load_checkpoint(cfg["checkpoint"])
    truth = cfg.get("truth")
    if "spectrum" in cfg:
        x = read_spectrum_csv(cfg["spectrum"])
        if cfg.get("normalize", True):
            x = ds_mod.normalize_max(x[None])[0]
    else:
        e = cfg["eigenstate"]
        es, spectra = pipeline.clean_states(e["geometry"], e.get("scan", {}))
        if e["index"] >= len(es.energies):
            raise ConfigError(f"index {e['index']} out of range for {len(es.energies)} states",
                              "/eigenstate/index")
        x = spectra[e["index"]]
        truth = es.coefficients[e["index"]] if truth is None else truth
    if x.size != int(np.prod(net.config.input_shape)):
        raise InvalidInputError(f"spectrum has {x.size} points, network expects {net.config.input_shape}")
    if truth is not None and len(truth) != net.config.output_dim:
        raise ConfigError(f"truth has {len(truth)} entries, network predicts {net.config.output_dim}", "/truth")
    coeff, value = predict(net, x.reshape(net.config.input_shape), truth)
    rows = [[m, _fmt(c)] + ([_fmt(truth[m])] if truth is not None else []) for m, c in enumerate(coeff)]
    _write_rows(out / "coefficients.csv", ["site", "coefficient"] + (["truth"] if truth is not None else []), rows)
    summary = {"n_sites": len(coeff)} | ({"loss": value} if value is not None else {})
    _write_manifest(out, cfg, ["coefficients.csv"], summary)
    print(f"predicted {len(coeff)} coefficients" + (f", loss {value:.3e}" if value is not None else ""))
    return EXIT_OK


def cmd_localfield(cfg: dict, out: Path) -> int:
    net = _load_checkpoint(cfg["checkpoint"])
    geometry = build_geometry(cfg["geometry"])
    tip_cfg = cfg.get("tip", {})
    sys_ = LocalFieldSystem(geometry, MolecularResonance(**cfg.get("resonance", {})),
                            None if tip_cfg is None else TipModel(**tip_cfg),
                            cfg.get("spacing", 1.25), cfg.get("gap", 1.25))
    scan_cfg = {"kind": "line", **cfg.get("scan", {})}
    freq = cfg.get("frequency", {})
    peaks_cfg = cfg.get("peaks", {})
    res = pipeline.analyze_local_field(sys_, scan_cfg, net, freq.get("n_omega", 2000), freq.get("pad", 50.0),
                                       peaks_cfg.get("prominence", 1e-3), peaks_cfg.get("min_separation", 2))
    files = ["integrated.csv", "peaks.csv", "slices.csv", "coefficients.csv"]
    if cfg.get("write_map", True):
        write_map_csv(out / "map.csv", FrequencyMap(res["omega"], res["values"]))
        files.insert(0, "map.csv")
    total = res["values"].sum(axis=1)
    _write_rows(out / "integrated.csv", ["omega", "absorption"],
                ([_fmt(w), _fmt(a)] for w, a in zip(res["omega"], total)))
    peaks = res["peaks"]
    _write_rows(out / "peaks.csv", ["peak", "omega", "state", "exciton_omega", "offset", "pearson", "loss"],
                ([p["peak"], _fmt(p["omega"]), p["state"], _fmt(p["exciton_omega"]), _fmt(p["offset"]),
                  _fmt(p["pearson"]), _fmt(p["loss"])] for p in peaks))
    xs = res["scan"].positions[:, 0]
    rows = [p["grid_index"] for p in peaks]
    _write_rows(out / "slices.csv", ["x_nm"] + [f"peak_{p['peak']}" for p in peaks],
                ([_fmt(x)] + [_fmt(res["values"][r, i]) for r in rows] for i, x in enumerate(xs)))
    _write_rows(out / "coefficients.csv", ["peak", "state"] + [f"c_{m}" for m in range(geometry.n)],
                ([p["peak"], p["state"]] + [_fmt(c) for c in p["coefficients"]] for p in peaks))
    summary = {"peaks": len(peaks), "states": geometry.n, "z_dip_nm": sys_.z_dip,
               "n_omega": len(res["omega"]), "n_tip": res["scan"].n_tip}
    _write_manifest(out, cfg, files, summary)
    print(f"{len(peaks)} of {geometry.n} peaks resolved")
    return EXIT_OK


def cmd_baseline(cfg: dict, out: Path) -> int:
    budget = {"max_iterations": cfg.get("max_iterations", 1000), "target_cost": cfg.get("target_cost", 1e-10)}
    jobs = []
    if "quadratic" in cfg:
        q = cfg["quadratic"]
        jobs.append((None, bl.QuadraticProblem(np.array(q["center"]), q.get("weights"), **budget), None))
    else:
        if "geometry" not in cfg:
            raise ConfigError("either 'geometry' or 'quadratic' is required")
        geometry = build_geometry(cfg["geometry"])
        scan = build_scan(geometry, {"n_tip": 400, **cfg.get("scan", {})})
        es = diagonalize(build_hamiltonian(geometry))
        states = cfg.get("states", "all")
        states = range(geometry.n) if states == "all" else states
        for s in states:
            if s >= geometry.n:
                raise ConfigError(f"state {s} out of range for {geometry.n} sites", "/states")
            c = es.coefficients[s]
            jobs.append((s, bl.BaselineProblem.from_coefficients(c, geometry, scan, **budget), c))
    records, traces = [], []
    for state, problem, truth in jobs:
        for k, method in enumerate(cfg["methods"]):
            seed = derive_seed(cfg["master_seed"], -1 if state is None else state, k)
            r = bl.minimize(problem, method, seed)
            rec = r.to_record(truth)
            rec["state"] = state
            if truth is None:
                rec["distance_to_minimum"] = float(np.linalg.norm(r.candidate - problem.center))
            records.append(rec)
            traces += [[method, "" if state is None else state, i + 1, _fmt(v)] for i, v in enumerate(r.trace)]
            print(f"state={state} {method}: cost {r.cost:.3e} after {r.iterations} evaluations"
                  + (f", loss {rec['loss']:.2e}" if "loss" in rec else "")
                  + ("" if r.converged else " (not converged)"))
    (out / "results.json").write_text(json.dumps(records, indent=2) + "\n")
    _write_rows(out / "traces.csv", ["method", "state", "evaluation", "best_cost"], traces)
    n_fail = sum(not r["converged"] for r in records)
    _write_manifest(out, cfg, ["results.json", "traces.csv"], {"runs": len(records), "not_converged": n_fail})
    return EXIT_NONCONVERGED if n_fail else EXIT_OK


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "localfield": cmd_localfield, "baseline": cmd_baseline}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="excirec", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"excirec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file or preset:NAME")
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg["command"] != args.command:
            raise ConfigError(f"config is for '{cfg['command']}', not '{args.command}'", "/command")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg.get("output_dir", f"excirec-{args.command}"))
        out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return HANDLERS[args.command](cfg, out)
        return HANDLERS[args.command](cfg, out)
    except (ConfigError, InvalidConfigError, InvalidInputError, DomainError, FormatError) as exc:
        print(f"excirec: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"excirec: not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (NumericalError, SingularityError, DegenerateOutputError, TrainingError) as exc:
        print(f"excirec: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
