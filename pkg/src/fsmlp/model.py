"""FSMLP: RevIN -> DCT -> [embedding] -> SCWM x n -> FTM x n -> head -> inverse DCT -> RevIN^-1."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .analysis.constraints import ConstraintKind, apply_constraint
from .autodiff import DimensionError, Node, NumericGuardError, add
from .frequency import DctPlan, dct_forward, dct_inverse
from .layers import (
    FTMBlock,
    Layer,
    Linear,
    RevIN,
    SCWMBlock,
    SimplexLinear,
    canonical_transform,
    simplex_axis_index,
)
from .autodiff import activation as _check_activation

CHECKPOINT_MAGIC = b"FSMLPCK\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 7
    n_blocks: int = 3
    hidden_dim: int = 128
    transform: str = "log"
    activation: str = "gelu"
    simplex_axis: str = "input"
    no_embedding: bool = False
    revin_affine: bool = False
    constraint: str = "simplex"
    penalty_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lookback", "horizon", "channels", "n_blocks", "hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lookback < 2:
            raise ValueError("lookback must be >= 2 for instance normalisation")
        canonical_transform(self.transform)
        _check_activation(self.activation)
        simplex_axis_index(self.simplex_axis)
        self.constraint_kind()

    def constraint_kind(self) -> ConstraintKind:
        return ConstraintKind.parse(self.constraint, self.penalty_lambda)

    @property
    def feature_dim(self) -> int:
        return self.lookback if self.no_embedding else self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_count(config: ModelConfig) -> int:
    """Exact trainable-parameter count.

    With F = feature width (hidden_dim, or lookback without embedding),
    N channels, n blocks, horizon tau:

        embedding   L*F + F                      (absent with no_embedding)
        SCWM        n * (mixer(N) + F*F + F)     mixer: N*N + N; svd:k -> k*(2N+1) + N
        FTM         n * (F*F + F)
        head        F*tau + tau
        RevIN       2N if revin_affine
    """
    c = config
    f = c.feature_dim
    n = c.channels
    total = 0 if c.no_embedding else c.lookback * f + f
    kind = c.constraint_kind()
    mixer = kind.rank * (2 * n + 1) + n if kind.kind == "svd" else n * n + n
    total += c.n_blocks * (mixer + f * f + f)
    total += c.n_blocks * (f * f + f)
    total += f * c.horizon + c.horizon
    if c.revin_affine:
        total += 2 * n
    return total


class FSMLP(Layer):
    """Frequency-domain simplex MLP forecaster.

    ``forward`` maps a (batch, channels, lookback) array to a
    (batch, channels, horizon) graph node in the input's units.
    """

    _children = ("revin", "embedding", "scwm", "ftm", "head")

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        f = c.feature_dim
        self.revin = RevIN(c.channels, affine=c.revin_affine)
        self.plan_in = DctPlan.build(c.lookback)
        self.plan_out = DctPlan.build(c.horizon)
        self.embedding = None if c.no_embedding else Linear(c.lookback, f, rng)
        kind = c.constraint_kind()
        self.scwm = [
            SCWMBlock(c.channels, f,
                      mixer=apply_constraint(c.channels, c.channels, kind, rng,
                                             c.transform, c.simplex_axis),
                      act=c.activation, rng=rng)
            for _ in range(c.n_blocks)
        ]
        self.ftm = [FTMBlock(f, c.activation, rng) for _ in range(c.n_blocks)]
        self.head = Linear(f, c.horizon, rng)

    def _check(self, node: Node, stage: str) -> Node:
        if not np.all(np.isfinite(node.value)):
            raise NumericGuardError(f"non-finite values after {stage}")
        return node

    def forward(self, x) -> Node:
        x = np.asarray(x, dtype=np.float64)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.channels, c.lookback):
            raise DimensionError(
                f"expected input (B, {c.channels}, {c.lookback}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericGuardError("non-finite values in input")
        z, state = self.revin.normalize(x)
        z = self._check(dct_forward(z, self.plan_in), "frequency transform")
        if self.embedding is not None:
            z = self._check(self.embedding(z), "embedding")
        for i, block in enumerate(self.scwm):
            z = self._check(block(z), f"SCWM block {i}")
        for i, block in enumerate(self.ftm):
            z = self._check(block(z), f"FTM block {i}")
        z = self._check(self.head(z), "forecast head")
        z = dct_inverse(z, self.plan_out)
        return self._check(self.revin.denormalize(z, state), "denormalisation")

    __call__ = forward

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size]).value for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.config.channels, self.config.horizon))
        return np.concatenate(out, axis=0)

    def penalty(self) -> Node | None:
        terms = [t for t in (b.penalty() for b in self.scwm) if t is not None]
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = add(total, t)
        return total

    def simplex_layers(self) -> list:
        return [b.mixer for b in self.scwm if isinstance(b.mixer, SimplexLinear)]

    def state_dict(self) -> dict:
        return {k: v.value.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
        for name, p in params.items():
            p.value[...] = state[name]


# --- checkpoints -----------------------------------------------------------

class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


def save_checkpoint(model: FSMLP, path: str | os.PathLike, extra: dict | None = None):
    """Write ``magic | u64 header length | JSON header | little-endian float64 blob``."""
    tensors, chunks, offset = [], [], 0
    for name, p in model.named_parameters().items():
        data = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": "fsmlp-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "config": model.config.to_dict(),
        "tensors": tensors,
        "data_bytes": offset,
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for chunk in chunks:
            fh.write(chunk)


def read_checkpoint_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an FSMLP checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {header.get('version')!r}, "
            f"this build reads version {CHECKPOINT_VERSION}")
    blob = raw[16 + hlen:]
    if len(blob) != header.get("data_bytes"):
        raise CheckpointError(
            f"{path}: truncated data ({len(blob)} of {header.get('data_bytes')} bytes)")
    return header, blob


def load_checkpoint(path: str | os.PathLike) -> FSMLP:
    header, blob = read_checkpoint_header(path)
    try:
        config = ModelConfig.from_dict(header["config"])
        state = {}
        for t in header["tensors"]:
            start, n = t["offset"], t["nbytes"]
            if start + n > len(blob):
                raise CheckpointError(f"{path}: tensor {t['name']} runs past end of data")
            arr = np.frombuffer(blob[start:start + n], dtype="<f8")
            state[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
        model = FSMLP(config)
        model.load_state_dict(state)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model
