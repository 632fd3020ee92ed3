"""Constraint / loss-mode comparison runs and the synthetic overfitting task."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, replace

from ..data import WindowedDataset, synthetic_mixing_series
from ..model import FSMLP, ModelConfig
from ..training import TrainConfig, TrainingDiverged, train
from .constraints import ConstraintKind

ROW_FIELDS = ("constraint", "loss_mode", "seed", "train_loss_final", "val_loss_best", "gap",
              "test_mse", "test_mae", "best_epoch", "status")


@dataclass
class GapRow:
    constraint: str
    loss_mode: str
    seed: int
    train_loss_final: float
    val_loss_best: float
    gap: float
    test_mse: float | None
    test_mae: float | None
    best_epoch: int
    status: str = "ok"


def run_one(dataset: WindowedDataset, constraint: str, model_config: ModelConfig,
            train_config: TrainConfig) -> GapRow:
    kind = ConstraintKind.parse(constraint, model_config.penalty_lambda)
    mcfg = replace(model_config, constraint=str(kind), penalty_lambda=kind.lam,
                   channels=dataset.n_channels, lookback=dataset.lookback,
                   horizon=dataset.horizon)
    model = FSMLP(mcfg)
    status = "ok"
    try:
        report = train(model, dataset, train_config)
    except TrainingDiverged as exc:
        report, status = exc.report, "diverged"
    return GapRow(
        constraint=str(kind), loss_mode=train_config.loss_mode, seed=train_config.seed,
        train_loss_final=report.final_train_loss, val_loss_best=report.best_val_loss,
        gap=report.generalization_gap, test_mse=report.test_mse, test_mae=report.test_mae,
        best_epoch=report.best_epoch, status=status,
    )


def gap_experiment(dataset: WindowedDataset, constraints, model_config: ModelConfig,
                   train_config: TrainConfig, loss_modes=None) -> list:
    """Train one model per (constraint, loss mode) with identical seeds and config."""
    loss_modes = loss_modes or (train_config.loss_mode,)
    rows = []
    for constraint in constraints:
        for mode in loss_modes:
            rows.append(run_one(dataset, constraint, model_config,
                                replace(train_config, loss_mode=mode)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    return buf.getvalue()


def format_table(rows) -> str:
    head = f"{'constraint':<12}{'loss':<11}{'train':>10}{'val*':>10}{'gap':>10}{'mse':>10}{'mae':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        mse = "n/a" if r.test_mse is None else f"{r.test_mse:.4f}"
        mae = "n/a" if r.test_mae is None else f"{r.test_mae:.4f}"
        lines.append(f"{r.constraint:<12}{r.loss_mode:<11}{r.train_loss_final:>10.4f}"
                     f"{r.val_loss_best:>10.4f}{r.gap:>10.4f}{mse:>10}{mae:>10}"
                     + ("" if r.status == "ok" else f"  [{r.status}]"))
    return "\n".join(lines)


# The synthetic overfitting task: few training windows, many channels and
# rare large outliers, so an unconstrained channel mixer can memorise them.
SYNTHETIC_TASK = dict(n_steps=600, n_channels=32, n_sources=3, noise=0.5,
                      outlier_frac=0.01, outlier_scale=5.0)
SYNTHETIC_MODEL = dict(lookback=24, horizon=12, n_blocks=2, hidden_dim=16)
SYNTHETIC_TRAIN = dict(epochs=40, patience=40, batch_size=16, learning_rate=0.01)


def synthetic_gap_dataset(seed: int = 0, **overrides) -> WindowedDataset:
    opts = {**SYNTHETIC_TASK, **overrides}
    lookback = opts.pop("lookback", SYNTHETIC_MODEL["lookback"])
    horizon = opts.pop("horizon", SYNTHETIC_MODEL["horizon"])
    series, _ = synthetic_mixing_series(seed=seed, **opts)
    return WindowedDataset.from_series(series, lookback, horizon, scheme="ratio")


def synthetic_gap_configs(seed: int = 0) -> tuple[ModelConfig, TrainConfig]:
    ds_ch = SYNTHETIC_TASK["n_channels"]
    return (ModelConfig(channels=ds_ch, seed=seed, **SYNTHETIC_MODEL),
            TrainConfig(seed=seed, **SYNTHETIC_TRAIN))
