"""Command-line interface: ``fsmlp {train,eval,stats,rademacher,ablate}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric divergence.
Configuration files are INI-style with ``[model]``, ``[train]`` and ``[run]``
sections; flags override file values. Each run directory receives a
``config.resolved`` that reproduces the run when passed back via ``--config``.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .analysis.experiments import (
    format_table,
    gap_experiment,
    rows_to_csv,
    synthetic_gap_configs,
    synthetic_gap_dataset,
)
from .analysis.constraints import ConstraintKind
from .analysis.rademacher import rademacher_estimate
from .data import DataError, WindowedDataset, load_csv, sigma_stats
from .model import CheckpointError, FSMLP, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

RUN_KEYS = ("data", "out", "run_name", "split_scheme")
SPLIT_SCHEMES = ("auto", "ratio", "benchmark")
_CHOICES = {
    "transform": ("abs", "log", "square"),
    "activation": ("gelu", "relu"),
    "simplex_axis": ("input", "output"),
    "loss_mode": ("dual", "time_only"),
}

_HELP = {
    "lookback": "input window length L",
    "horizon": "forecast length",
    "channels": "channel count; inferred from the data when omitted",
    "n_blocks": "number of SCWM blocks and of FTM blocks",
    "hidden_dim": "feature width after the lookback embedding",
    "transform": "non-negativity transform of the simplex weights",
    "activation": "activation inside every residual block",
    "simplex_axis": "axis whose slices sum to one",
    "no_embedding": "run the blocks directly on the L frequency coefficients",
    "revin_affine": "learnable per-channel affine in instance normalisation",
    "constraint": "channel mixer: simplex, none, l1, l2, l1:<lambda>, svd:<rank>",
    "penalty_lambda": "weight of the l1 / l2 penalty",
    "seed": "seed for initialisation and batch shuffling",
    "epochs": "maximum training epochs",
    "patience": "epochs without validation improvement before stopping",
    "batch_size": "windows per optimiser step",
    "learning_rate": "Adam step size",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "loss_mode": "dual adds the frequency-domain MAE to the time-domain MSE",
    "raw_metrics": "report test metrics in original units",
    "divergence_threshold": "abort when the training loss exceeds this",
}

log = logging.getLogger("fsmlp")


class ConfigError(ValueError):
    pass


@dataclass
class CliConfig:
    model: ModelConfig
    train: TrainConfig
    run: dict = field(default_factory=dict)

    def to_ini(self) -> str:
        lines = []
        for section, values in (("model", self.model.to_dict()),
                                ("train", self.train.to_dict()),
                                ("run", self.run)):
            lines.append(f"[{section}]")
            for k, v in values.items():
                if v is None:
                    continue
                lines.append(f"{k} = {_format_value(v)}")
            lines.append("")
        return "\n".join(lines)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(text, typ, key: str):
    if not isinstance(text, str):
        return text
    try:
        if typ is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {text!r} as {typ.__name__}") from None
    return text.strip()


def _field_types(cls) -> dict:
    return {f.name: type(f.default) for f in fields(cls)}


def read_config_file(path: str) -> dict:
    """Parse an INI config into ``{section: {key: raw string}}``; unknown keys are errors."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    allowed = {
        "model": set(_field_types(ModelConfig)),
        "train": set(_field_types(TrainConfig)),
        "run": set(RUN_KEYS),
    }
    out = {}
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"{path}: unknown section [{section}]")
        values = dict(parser.items(section))
        unknown = set(values) - allowed[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")
        out[section] = values
    return out


def resolve_config(args: argparse.Namespace, base: tuple | None = None) -> CliConfig:
    """Merge defaults, the optional config file and explicit flags (highest priority).

    ``base`` optionally replaces the built-in defaults with a
    ``(ModelConfig, TrainConfig)`` pair.
    """
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    given = vars(args)
    bases = dict(zip(("model", "train"), base)) if base else {}
    sections = {}
    for name, cls in (("model", ModelConfig), ("train", TrainConfig)):
        types = _field_types(cls)
        values = bases[name].to_dict() if name in bases else {}
        values.update({k: _coerce(v, types[k], f"{name}.{k}")
                       for k, v in file_values.get(name, {}).items()})
        for k in types:
            if k in given and given[k] is not None and k != "seed":
                values[k] = given[k]
        if given.get("seed") is not None:
            values["seed"] = given["seed"]
        try:
            sections[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    run = dict(file_values.get("run", {}))
    for k in RUN_KEYS:
        if given.get(k) is not None:
            run[k] = given[k]
    scheme = run.get("split_scheme", "auto")
    if scheme not in SPLIT_SCHEMES:
        raise ConfigError(f"split_scheme must be one of {SPLIT_SCHEMES}, got {scheme!r}")
    run["split_scheme"] = scheme
    return CliConfig(sections["model"], sections["train"], run)


# --- argument parsing ------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, skip=()):
    g = p.add_argument_group("model / training overrides")
    for cls in (ModelConfig, TrainConfig):
        for f in fields(cls):
            if f.name in skip or (cls is TrainConfig and f.name == "seed"):
                continue
            flag = "--" + f.name.replace("_", "-")
            typ = type(f.default)
            text = _HELP[f.name]
            if typ is bool:
                g.add_argument(flag, dest=f.name, action="store_const", const=True,
                               default=None, help=text)
            else:
                default = "" if f.name == "channels" else f" (default {f.default})"
                g.add_argument(flag, dest=f.name, type=typ, default=None,
                               choices=_CHOICES.get(f.name), help=text + default)


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file with [model], [train], [run] sections")
    p.add_argument("--out", default=None,
                   help="output root (default $FSMLP_OUT or ./runs)")
    p.add_argument("--run-name", dest="run_name", default=None, help="run directory name")
    p.add_argument("--split-scheme", dest="split_scheme", choices=SPLIT_SCHEMES, default=None,
                   help="chronological split rule (default auto)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsmlp", description="Frequency simplex MLP forecasting tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, losses and report")
    p.add_argument("--data", default=None, help="CSV file (first column 'date')")
    _add_run_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a data split")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by train")
    p.add_argument("--data", required=True, help="CSV file the model was trained on")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--split-scheme", dest="split_scheme", choices=SPLIT_SCHEMES, default="auto")
    p.add_argument("--raw-metrics", action="store_true",
                   help="score in original units instead of standardised")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--timing", action="store_true",
                   help="report inference seconds per 256 samples")
    p.add_argument("--output", help="write metrics JSON here")

    p = sub.add_parser("stats", help="fraction of values within 1 sigma / beyond 3 sigma")
    p.add_argument("--data", nargs="+", required=True, help="one or more CSV files")
    p.add_argument("--output", help="write JSON here")

    p = sub.add_parser("rademacher", help="Monte-Carlo Rademacher complexity of linear classes")
    p.add_argument("--m", type=int, default=200, help="number of data points")
    p.add_argument("--dim", type=int, default=10, help="data dimension")
    p.add_argument("--trials", type=int, default=10_000, help="sign vectors to sample")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--radius", type=float, default=10.0, help="L2-ball radius B")
    p.add_argument("--data", help="use the first --m standardised rows of this CSV "
                                  "instead of Gaussian samples")
    p.add_argument("--output", help="write JSON here")

    p = sub.add_parser("ablate", help="compare channel-mixer constraints and loss modes")
    p.add_argument("--data", default=None,
                   help="CSV file; without it the synthetic outlier task and its smaller "
                        "model settings are used, still overridable by flags")
    p.add_argument("--constraints", default="simplex,none,l1,l2",
                   help="comma list of simplex, none, l1, l2, l1:<lambda>, svd:<rank>")
    p.add_argument("--loss-modes", dest="loss_modes", default=None,
                   help="comma list of dual, time_only (default: the configured loss_mode)")
    _add_run_flags(p)
    _add_config_flags(p)
    return parser


# --- commands --------------------------------------------------------------

def _out_root(run: dict) -> str:
    return run.get("out") or os.environ.get("FSMLP_OUT") or "runs"


def _run_dir(cfg: CliConfig, default_name: str) -> str:
    name = cfg.run.get("run_name") or default_name
    path = os.path.join(_out_root(cfg.run), name)
    os.makedirs(path, exist_ok=True)
    return path


def _load_dataset(path: str, model_cfg: ModelConfig, scheme: str) -> WindowedDataset:
    series = load_csv(path)
    return WindowedDataset.from_series(series, model_cfg.lookback, model_cfg.horizon, scheme)


def _with_channels(cfg: ModelConfig, n_channels: int, explicit: bool) -> ModelConfig:
    if explicit and cfg.channels != n_channels:
        raise ConfigError(f"channels={cfg.channels} but the data has {n_channels} channels")
    return replace(cfg, channels=n_channels)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data = cfg.run.get("data")
    if not data:
        raise ConfigError("train needs --data (or data = ... in [run])")
    data = os.path.abspath(data)
    cfg.run["data"] = data
    ds = _load_dataset(data, cfg.model, cfg.run["split_scheme"])
    explicit = getattr(args, "channels", None) is not None or "channels" in (
        read_config_file(args.config).get("model", {}) if args.config else {})
    cfg.model = _with_channels(cfg.model, ds.n_channels, explicit)

    default_name = f"{ds.name}_L{cfg.model.lookback}_H{cfg.model.horizon}_s{cfg.train.seed}"
    run_dir = _run_dir(cfg, default_name)
    cfg.run["run_name"] = os.path.basename(run_dir)
    with open(os.path.join(run_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_ini())

    model = FSMLP(cfg.model)
    code = EXIT_OK
    try:
        report = train(model, ds, cfg.train)
    except TrainingDiverged as exc:
        report, code = exc.report, EXIT_DIVERGED
        print(f"error: training diverged: {exc}", file=sys.stderr)
    report.write_json(os.path.join(run_dir, "report.json"))
    report.write_losses_csv(os.path.join(run_dir, "losses.csv"))
    if code == EXIT_OK:
        save_checkpoint(model, os.path.join(run_dir, "model.ckpt"))

    print(f"run dir      {run_dir}")
    print(f"epochs       {report.stopped_epoch} ({report.stop_reason})")
    print(f"best epoch   {report.best_epoch}  val mse {report.best_val_loss:.6f}")
    if report.test_mse is not None:
        space = "raw" if cfg.train.raw_metrics else "standardised"
        print(f"test ({space})  mse {report.test_mse:.6f}  mae {report.test_mae:.6f}")
    return code


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    ds = _load_dataset(args.data, model.config, args.split_scheme)
    if ds.n_channels != model.config.channels:
        raise DataError(f"{args.data} has {ds.n_channels} channels, "
                        f"checkpoint expects {model.config.channels}")
    x, y = ds.windows(args.split)
    if len(x) == 0:
        raise DataError(f"{args.split} split of {args.data} has no windows")
    inverse = ds.inverse_transform if args.raw_metrics else None
    result = {"split": args.split, "n_windows": int(len(x)),
              "space": "raw" if args.raw_metrics else "standardised",
              **evaluate(model, x, y, args.batch_size, inverse)}
    if args.timing:
        batch = x[:256]
        t0 = time.perf_counter()
        model.predict(batch, 256)
        result["seconds_per_256"] = (time.perf_counter() - t0) * 256 / len(batch)
    text = json.dumps(result, indent=2, sort_keys=True)
    print(f"{args.split:<6} mse {result['mse']:.6f}  mae {result['mae']:.6f}  "
          f"({result['n_windows']} windows, {result['space']})")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    results = [sigma_stats(load_csv(path)) for path in args.data]
    print(f"{'dataset':<16}{'<= sigma':>12}{'>= 3 sigma':>12}{'cells':>12}")
    for r in results:
        print(f"{r['name']:<16}{100 * r['within_sigma']:>11.2f}%"
              f"{100 * r['beyond_3sigma']:>11.2f}%{r['n_cells']:>12}")
    payload = results[0] if len(results) == 1 else results
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_rademacher(args) -> int:
    if args.m < 1 or args.dim < 1:
        raise ConfigError("--m and --dim must be >= 1")
    if args.trials < 100:
        raise ConfigError("--trials must be >= 100")
    if args.data:
        values = load_csv(args.data).values
        values = (values - values.mean(axis=0)) / np.where(values.std(axis=0) > 0,
                                                           values.std(axis=0), 1.0)
        if len(values) < args.m:
            raise DataError(f"{args.data} has {len(values)} rows, --m is {args.m}")
        data = values[:args.m]
    else:
        data = np.random.default_rng(args.seed).standard_normal((args.m, args.dim))
    rows = [rademacher_estimate(data, "simplex", args.trials, args.seed),
            rademacher_estimate(data, "l2", args.trials, args.seed, radius=args.radius)]
    print(f"{'class':<14}{'estimate':>12}{'stderr':>12}{'bound':>12}")
    for r in rows:
        label = r.kind if r.radius is None else f"l2(B={r.radius:g})"
        print(f"{label:<14}{r.estimate:>12.6f}{r.stderr:>12.6f}{r.bound:>12.6f}")
    text = json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    synthetic = not (args.data or (args.config and read_config_file(args.config)
                                   .get("run", {}).get("data")))
    seed = args.seed if args.seed is not None else 0
    cfg = resolve_config(args, synthetic_gap_configs(seed) if synthetic else None)
    constraints = [c.strip() for c in args.constraints.split(",") if c.strip()]
    loss_modes = ([m.strip() for m in args.loss_modes.split(",") if m.strip()]
                  if args.loss_modes else None)
    for m in loss_modes or ():
        if m not in _CHOICES["loss_mode"]:
            raise ConfigError(f"unknown loss mode {m!r}")
    data = cfg.run.get("data")
    if data:
        cfg.run["data"] = os.path.abspath(data)
        ds = _load_dataset(cfg.run["data"], cfg.model, cfg.run["split_scheme"])
        name = ds.name
    else:
        ds = synthetic_gap_dataset(cfg.train.seed, lookback=cfg.model.lookback,
                                   horizon=cfg.model.horizon)
        name = "synthetic"
    cfg.model = replace(cfg.model, channels=ds.n_channels)
    try:
        for c in constraints:
            kind = ConstraintKind.parse(c, cfg.model.penalty_lambda)
            if kind.kind == "svd" and kind.rank > ds.n_channels:
                raise ValueError(f"{c}: rank exceeds the {ds.n_channels} channels")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    run_dir = _run_dir(cfg, f"ablate_{name}_L{cfg.model.lookback}_H{cfg.model.horizon}"
                            f"_s{cfg.train.seed}")
    cfg.run["run_name"] = os.path.basename(run_dir)
    with open(os.path.join(run_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_ini())
    rows = gap_experiment(ds, constraints, cfg.model, cfg.train, loss_modes)
    with open(os.path.join(run_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    print(format_table(rows))
    print(f"\nwrote {os.path.join(run_dir, 'ablation.csv')}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "rademacher": cmd_rademacher,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
