"""Command-line interface: ``mdcgan <verb> [flags]``.

Verbs: ``generate``, ``train``, ``sweep``, ``horizon``, ``mstudy`` and
``report``. Configuration is a flat JSON document (see ``config.schema.json``)
holding experiment fields and every training hyperparameter. Values resolve
as built-in defaults, then the ``--config`` file, then command-line flags.
The output directory is ``--out``, else ``$MDCGAN_OUT``, else ``./mdcgan-out``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import data as dm
from . import experiments as ex
from . import models as M
from .core import make_rng

OUT_ENV = "MDCGAN_OUT"
DEFAULT_OUT = "mdcgan-out"

TRAIN_FIELDS = [f.name for f in dataclasses.fields(M.TrainConfig)]
SPEC_FIELDS = [f.name for f in dataclasses.fields(ex.ExperimentSpec) if f.name != "config"]


class UsageError(Exception):
    """Bad flags or configuration (exit status 2)."""


# ---------------------------------------------------------------- value parsers

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _float_or_data(text: str):
    return "data" if text == "data" else float(text)


def _csv_list(kind):
    def parse(text: str) -> list:
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


def _flag_type(default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


_TRAIN_TYPES = {"sigma_a": _float_or_data, "z_var": _float_or_data}
_SPEC_TYPES = {"models": _csv_list(str), "noise": _csv_list(float), "m_values": _csv_list(int),
               "seeds": _csv_list(int), "normalize": _bool, "endpoint_only": _bool}


# ---------------------------------------------------------------- run configuration

def default_run_config() -> dict:
    """Every experiment and training field with its built-in default."""
    spec = ex.ExperimentSpec().to_dict()
    spec.pop("config")
    return {**spec, **M.TrainConfig().to_dict()}


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(doc) - set(default_run_config()))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    return doc


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    cfg = default_run_config()
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k in cfg}
    dataset = dict(cfg["dataset"])
    data_flags = {k: getattr(args, k, None) for k in ("dataset_name", "length", "data_seed", "column")}
    if data_flags["dataset_name"] is not None:
        name = data_flags["dataset_name"]
        if name in dm.GENERATORS:
            dataset = {"generator": name, "length": dataset.get("length", 2405), "seed": 0}
        else:
            dataset = {"csv": name, "column": 0}
    if "generator" in dataset:
        if data_flags["length"] is not None:
            dataset["length"] = data_flags["length"]
        if data_flags["data_seed"] is not None:
            dataset["seed"] = data_flags["data_seed"]
    elif data_flags["column"] is not None:
        col = data_flags["column"]
        dataset["column"] = int(col) if col.lstrip("-").isdigit() else col
    cfg.update(flags)
    cfg["dataset"] = dataset
    if "seed" in flags and "seeds" not in flags and getattr(args, "shift_seeds", False):
        cfg["seeds"] = [flags["seed"] + i for i in range(len(cfg["seeds"]))]
    return cfg


def spec_from_run_config(cfg: dict) -> ex.ExperimentSpec:
    train = {k: cfg[k] for k in TRAIN_FIELDS if k not in ("k", "seed")}
    spec = {k: cfg[k] for k in SPEC_FIELDS}
    try:
        return ex.ExperimentSpec.from_dict({**spec, "config": train})
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from None


def train_config_from_run_config(cfg: dict, **fixed) -> M.TrainConfig:
    try:
        return M.TrainConfig.from_dict({**{k: cfg[k] for k in TRAIN_FIELDS}, **fixed})
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from None


def out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser, shift_seeds: bool = False) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON run configuration (unknown keys are errors)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes for experiment grids (default: all cores)")
    p.add_argument("--seed", type=int, default=S,
                   help="training seed" + ("; experiments use seed, seed+1, ..." if shift_seeds else ""))
    p.set_defaults(shift_seeds=shift_seeds)
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", dest="dataset_name",
                   help=f"generator ({', '.join(sorted(dm.GENERATORS))}) or a CSV path")
    g.add_argument("--length", type=_positive_int, help="generated series length")
    g.add_argument("--data-seed", type=int, help="generator seed")
    g.add_argument("--column", help="CSV column index or header name")
    defaults = default_run_config()
    g = p.add_argument_group("experiment fields")
    for name in SPEC_FIELDS:
        if name in ("dataset",):
            continue
        _add_flag(g, name, _SPEC_TYPES.get(name) or _flag_type(defaults[name]))
    g = p.add_argument_group("training hyperparameters")
    for name in TRAIN_FIELDS:
        if name in ("seed", "k"):
            continue
        _add_flag(g, name, _TRAIN_TYPES.get(name) or _flag_type(defaults[name]))


def _add_flag(group, name: str, kind) -> None:
    opts = [f"--{name}"]
    if "_" in name:
        opts.append(f"--{name.replace('_', '-')}")
    group.add_argument(*opts, dest=name, type=kind, default=argparse.SUPPRESS, metavar=name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdcgan", description="Mixture-density conditional GAN forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic series as CSV plus a JSON manifest")
    p.add_argument("generator", choices=sorted(dm.GENERATORS))
    p.add_argument("--length", type=_positive_int, default=2405)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter (repeatable), e.g. --param tau=17")
    p.add_argument("--name", help="file stem (default: generator name)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    p = sub.add_parser("train", help="train one forecaster and write a checkpoint plus curve")
    p.add_argument("model", choices=M.KINDS)
    _add_common(p)

    for verb, text in (("sweep", "one-step MSE against test-input noise"),
                       ("horizon", "recursive multi-step MSE ratio to AR(0)"),
                       ("mstudy", "MD-CGAN negative log-likelihood per mixture order")):
        _add_common(sub.add_parser(verb, help=text), shift_seeds=True)

    p = sub.add_parser("report", help="print a results table; optionally export a density grid")
    p.add_argument("results", help="results JSON written by sweep, horizon or mstudy")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--grid", metavar="CHECKPOINT",
                   help="write posterior density CSVs for this checkpoint on the results' test split")
    p.add_argument("--resolution", type=_positive_int, default=1000)
    p.add_argument("--out", help=f"output directory for --grid (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    return parser


# ---------------------------------------------------------------- commands

def _parse_params(items) -> dict:
    params = {}
    for item in items:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(text)
        except json.JSONDecodeError:
            params[key] = text
    return params


def cmd_generate(args) -> int:
    params = _parse_params(args.param)
    try:
        series = dm.generate(args.generator, args.length, args.seed, **params)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad generator parameters: {e}") from None
    stem = args.name or args.generator
    d = out_dir(args)
    csv_path, man_path = d / f"{stem}.csv", d / f"{stem}.json"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([series.name])
    w.writerows([repr(float(v))] for v in series.values)
    text = buf.getvalue()
    man = {"version": 1, "source": {k: series.meta[k] for k in ("generator", "length", "seed", "params")},
           "rows": len(series), "file": csv_path.name,
           "csv_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
           "package_version": __version__}
    _atomic_write(csv_path, text)
    _atomic_write(man_path, json.dumps(man, indent=2, sort_keys=True) + "\n")
    print(csv_path)
    return 0


def _curve_csv(history: list[dict]) -> str:
    keys = ["iteration"]
    for row in history:
        keys += [k for k in row if k not in keys]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in history:
        w.writerow(["" if row.get(k) is None else repr(row[k]) for k in keys])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = resolve(args)
    spec = spec_from_run_config(cfg)
    tcfg = train_config_from_run_config(cfg)
    prep = ex.prepare(spec)
    f = M.make_forecaster(args.model, tcfg)
    f.fit(prep.split.train)
    f.meta["run_config"] = cfg
    f.meta["manifest"] = prep.manifest
    d = out_dir(args)
    ckpt = d / f"{f.name}.ckpt.json"
    _atomic_write(ckpt, json.dumps(M.to_checkpoint(f), sort_keys=True) + "\n")
    _atomic_write(d / f"{f.name}_curve.csv", _curve_csv(f.history))
    print(ckpt)
    return 0


_EXPERIMENTS = {"sweep": (ex.noise_sweep, "sweep"), "horizon": (ex.horizon_eval, "horizon"),
                "mstudy": (ex.mixture_order_study, "mstudy")}


def cmd_experiment(args) -> int:
    cfg = resolve(args)
    spec = spec_from_run_config(cfg)
    runner, stem = _EXPERIMENTS[args.command]
    table = runner(spec, jobs=args.jobs)
    table.metadata["run_config"] = cfg
    jpath, _ = table.write(out_dir(args), stem)
    print(table.format_text())
    print(jpath)
    return 0


def cmd_report(args) -> int:
    path = Path(args.results)
    try:
        table = ex.load_results(path)
    except FileNotFoundError:
        raise UsageError(f"results file {path} not found") from None
    except (json.JSONDecodeError, ValueError) as e:
        raise UsageError(f"{path} is not a valid results document: {e}") from None
    text = table.to_csv() if args.format == "csv" else table.format_text() + "\n"
    if args.grid:
        try:
            f = M.load_checkpoint(args.grid)
        except FileNotFoundError:
            raise UsageError(f"checkpoint {args.grid} not found") from None
        if not f.probabilistic:
            raise UsageError(f"{f.name} has no predictive density to export")
        spec = ex.ExperimentSpec.from_dict(table.metadata["spec"])
        test = ex.prepare(spec).split.test
        grid = ex.density_grid(f, test, args.resolution, rng=make_rng(f.cfg.seed + 65537))
        grid.write(out_dir(args), f"{f.name}_density")
    sys.stdout.write(text)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sweep": cmd_experiment,
            "horizon": cmd_experiment, "mstudy": cmd_experiment, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.exit(2, f"mdcgan: error: {e}\n")
    except M.TrainingDiverged as e:
        parser.exit(3, f"mdcgan: {e}\n")
    except ex.CellError as e:
        parser.exit(1, f"mdcgan: {e}\n")
    except (OSError, ValueError) as e:
        parser.exit(1, f"mdcgan: {e}\n")


if __name__ == "__main__":
    sys.exit(main())
