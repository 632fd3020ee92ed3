"""Dual-domain loss, Adam, early-stopped training and evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Node, NumericGuardError, abs_, as_node, mean, square, sub
from .frequency import DctPlan, dct_forward
from .model import FSMLP

log = logging.getLogger(__name__)

LOSS_MODES = ("dual", "time_only")


@dataclass
class TrainConfig:
    epochs: int = 100
    patience: int = 10
    batch_size: int = 256
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_mode: str = "dual"
    raw_metrics: bool = False
    divergence_threshold: float = 1e6

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError(f"patience must be in [1, epochs], got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# --- losses ----------------------------------------------------------------

def time_loss(pred, target) -> Node:
    """Mean squared error over every entry."""
    return mean(square(sub(pred, target)), keepdims=False)


def freq_loss(pred, target, plan: DctPlan) -> Node:
    """Mean absolute error between DCT coefficients along the horizon axis."""
    pred = as_node(pred)
    diff = sub(dct_forward(pred, plan), dct_forward(np.asarray(target, dtype=np.float64), plan))
    return mean(abs_(diff), keepdims=False)


def dual_loss(pred, target, plan: DctPlan, mode: str = "dual", return_parts: bool = False):
    """``time MSE + frequency MAE`` (or time MSE only with ``mode='time_only'``).

    With ``return_parts`` also returns the float values of both components;
    the frequency term is reported even when it is not optimised.
    """
    pred = as_node(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    lt = time_loss(pred, target)
    lf = freq_loss(pred, target, plan)
    total = lt + lf if mode == "dual" else lt
    if not math.isfinite(float(total.value)):
        raise NumericGuardError("loss is not finite")
    if return_parts:
        return total, float(lt.value), float(lf.value)
    return total


# --- optimiser -------------------------------------------------------------

def adam_step(params: list, grads: list, state: dict, lr: float,
              betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> list:
    """One bias-corrected Adam update. Mutates ``state`` and returns the new parameter arrays."""
    b1, b2 = betas
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    if len(state["m"]) != len(params):
        raise ValueError("optimiser state does not match parameters")
    state["t"] += 1
    t = state["t"]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if state["m"][i].shape != p.shape:
            raise ValueError(f"optimiser state shape {state['m'][i].shape} != param {p.shape}")
        m = state["m"][i] = b1 * state["m"][i] + (1 - b1) * g
        v = state["v"][i] = b2 * state["v"][i] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


class Adam:
    def __init__(self, params, lr: float = 0.01, betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state: dict = {}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        new = adam_step([p.value for p in self.params], grads, self.state, self.lr,
                        self.betas, self.eps)
        for p, v in zip(self.params, new):
            p.value[...] = v


# --- metrics ---------------------------------------------------------------

def metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return {"mse": float(np.mean(err * err)), "mae": float(np.mean(np.abs(err)))}


def evaluate(model: FSMLP, x: np.ndarray, y: np.ndarray, batch_size: int = 1024,
             inverse=None) -> dict:
    """MSE and MAE over all windows and entries.

    Inputs are expected in standardised units; pass ``inverse`` (for example
    ``dataset.inverse_transform``) to score in raw units instead.
    """
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty split")
    pred = model.predict(x, batch_size)
    if inverse is not None:
        pred, y = inverse(pred), inverse(y)
    return metrics(pred, y)


# --- training loop ---------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_fre_loss: float
    val_loss: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    """Per-epoch history and final metrics.

    ``train_loss`` is the batch-averaged time-domain MSE seen during the
    epoch and ``val_loss`` the validation MSE, so the two are comparable
    whatever the loss mode.
    """

    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_epoch: int = 0
    stop_reason: str = ""
    test_mse: float | None = None
    test_mae: float | None = None
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss if self.history else math.nan

    @property
    def generalization_gap(self) -> float:
        return self.best_val_loss - self.final_train_loss

    def to_dict(self) -> dict:
        # wall time is kept out so identical runs serialise identically
        return {
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_epoch": self.stopped_epoch,
            "stop_reason": self.stop_reason,
            "final_train_loss": self.final_train_loss,
            "test_mse": self.test_mse,
            "test_mae": self.test_mae,
            "history": [
                {"epoch": r.epoch, "train_loss": r.train_loss,
                 "train_fre_loss": r.train_fre_loss, "val_loss": r.val_loss}
                for r in self.history
            ],
            "model_config": self.model_config,
            "train_config": self.train_config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def write_losses_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.4f}"])


class TrainingDiverged(RuntimeError):
    """Loss exceeded the divergence threshold or became non-finite."""

    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def check_simplex(model: FSMLP, tol: float = 1e-9) -> bool:
    from .layers import in_simplex
    return all(in_simplex(layer.effective_weights(), layer.axis, tol)
               for layer in model.simplex_layers())


def fit_model(model: FSMLP, train_xy: tuple, val_xy: tuple, config: TrainConfig,
              callback=None) -> TrainReport:
    """Train with early stopping on validation MSE and restore the best parameters.

    ``callback(epoch, model)`` runs after every epoch (used by tests to check
    invariants mid-training). Raises :class:`TrainingDiverged` with the partial
    report attached when the loss blows up.
    """
    config.validate()
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train_xy)
    x_val, y_val = (np.asarray(a, dtype=np.float64) for a in val_xy)
    if len(x_tr) == 0 or len(x_val) == 0:
        raise ValueError("training needs non-empty train and validation splits")

    rng = np.random.default_rng(config.seed)
    plan = DctPlan.build(model.config.horizon)
    params = model.named_parameters()
    opt = Adam(params, config.learning_rate, (config.beta1, config.beta2), config.adam_eps)
    report = TrainReport(model_config=model.config.to_dict(), train_config=config.to_dict())
    best_state = model.state_dict()
    wait = 0
    n = len(x_tr)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sum_time = sum_fre = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                pred = model(x_tr[idx])
                loss, lt, lf = dual_loss(pred, y_tr[idx], plan, config.loss_mode,
                                         return_parts=True)
            except NumericGuardError as exc:
                report.stopped_epoch, report.stop_reason = epoch, f"diverged: {exc}"
                raise TrainingDiverged(report.stop_reason, report) from exc
            if lt > config.divergence_threshold:
                report.stopped_epoch, report.stop_reason = epoch, f"diverged: loss {lt:.3g}"
                raise TrainingDiverged(report.stop_reason, report)
            penalty = model.penalty()
            if penalty is not None:
                loss = loss + penalty
            opt.zero_grad()
            loss.backward()
            opt.step()
            sum_time += lt * len(idx)
            sum_fre += lf * len(idx)

        val = evaluate(model, x_val, y_val)["mse"]
        rec = EpochRecord(epoch, sum_time / n, sum_fre / n, val, time.perf_counter() - t0)
        report.history.append(rec)
        log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, rec.train_loss, val, rec.seconds)
        if callback is not None:
            callback(epoch, model)
        if not math.isfinite(val) or val > config.divergence_threshold:
            report.stopped_epoch, report.stop_reason = epoch, f"diverged: val loss {val:.3g}"
            raise TrainingDiverged(report.stop_reason, report)

        if val < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val, epoch
            best_state = model.state_dict()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                report.stopped_epoch, report.stop_reason = epoch, "early stopping"
                break
    else:
        report.stopped_epoch, report.stop_reason = config.epochs, "max epochs"

    model.load_state_dict(best_state)
    return report


def train(model: FSMLP, dataset, config: TrainConfig, callback=None) -> TrainReport:
    """Fit on ``dataset``'s train split, early-stop on val, then score the test split."""
    report = fit_model(model, dataset.windows("train"), dataset.windows("val"), config,
                       callback)
    x_te, y_te = dataset.windows("test")
    if len(x_te):
        inverse = dataset.inverse_transform if config.raw_metrics else None
        m = evaluate(model, x_te, y_te, inverse=inverse)
        report.test_mse, report.test_mae = m["mse"], m["mae"]
    return report
