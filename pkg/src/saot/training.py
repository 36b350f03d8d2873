"""Minibatch training with relative L2 loss, AdamW and cosine decay."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .darcy import GridSample, stack_samples
from .errors import ConfigurationError, DivergenceError, FormatError, NumericError
from .io import read_container, write_container
from .model import ModelConfig, SAOTModel, per_sample_relative_l2, relative_l2
from .nn import ParameterStore

SCHEDULES = ("cosine", "constant")
METRIC_COLUMNS = ("epoch", "train_rel_l2", "test_rel_l2", "wall_seconds")


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 8
    schedule: str = "cosine"
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigurationError("invalid Adam moment parameters")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def fit_normalization(model_config: ModelConfig, a: np.ndarray, u: np.ndarray) -> ModelConfig:
    """Copy of ``model_config`` with scalar input standardization and output RMS scale."""
    a_std = float(np.std(a))
    u_rms = float(np.sqrt(np.mean(u * u)))
    return replace(
        model_config,
        input_shift=float(np.mean(a)),
        input_scale=a_std if a_std > 0 else 1.0,
        output_scale=u_rms if u_rms > 0 else 1.0,
    )


def learning_rate_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.schedule == "constant" or total_steps <= 1:
        return cfg.learning_rate
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Adam with decoupled weight decay over a :class:`ParameterStore`."""

    def __init__(self, params: ParameterStore, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        c = self.cfg
        self.step_count += 1
        bc1 = 1.0 - c.beta1**self.step_count
        bc2 = 1.0 - c.beta2**self.step_count
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps) + c.weight_decay * p.data
            p.data -= lr * update

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v.copy() for k, v in self.m.items()}
        out.update({f"v/{k}": v.copy() for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], step: int) -> None:
        for k in self.m:
            self.m[k] = np.array(state[f"m/{k}"], copy=True)
            self.v[k] = np.array(state[f"v/{k}"], copy=True)
        self.step_count = int(step)


def clip_gradients(params: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in params.items()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in params.items():
            p.grad *= scale
    return total


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    history: list[dict] = field(default_factory=list)
    train_config: TrainConfig | None = None
    extra: dict = field(default_factory=dict)

    def build_model(self) -> SAOTModel:
        model = SAOTModel(self.model_config)
        model.params.load_state_dict(self.params)
        return model


def evaluate(model: SAOTModel, a: np.ndarray, u: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Per-sample relative L2 errors of ``model`` on stacked arrays."""
    errs = []
    with T.no_grad():
        for lo in range(0, len(a), batch_size):
            pred = model.forward(a[lo:lo + batch_size]).data
            errs.append(per_sample_relative_l2(pred, u[lo:lo + batch_size]))
    return np.concatenate(errs) if errs else np.zeros(0)


def _as_arrays(data):
    if data is None:
        return None
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.float64)
    samples = list(data)
    if not samples:
        return None
    if not isinstance(samples[0], GridSample):
        raise ConfigurationError("datasets must be GridSample lists or (a, u) array pairs")
    return stack_samples(samples)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    initial_train_rel_l2: float
    final_train_rel_l2: float
    model: SAOTModel


def train(train_set, test_set, model_config: ModelConfig, train_config: TrainConfig,
          log=None) -> TrainResult:
    """Minimize mean per-sample relative L2 with AdamW.

    ``train_set``/``test_set`` are lists of :class:`GridSample` or
    ``(a, u)`` array pairs. One metrics row is appended per epoch; the
    returned checkpoint holds the parameters of the epoch with the lowest
    test error (train error when no test set is given). With
    ``normalize`` the input standardization and output scale are fitted on
    the training set and stored in the checkpoint's model config. Raises
    :class:`DivergenceError` on a non-finite loss.
    """
    model_config.validate()
    train_config.validate()
    tr = _as_arrays(train_set)
    if tr is None:
        raise ConfigurationError("training set is empty")
    te = _as_arrays(test_set)
    a_tr, u_tr = tr
    if train_config.normalize:
        model_config = fit_normalization(model_config, a_tr, u_tr)
    model = SAOTModel(model_config)
    model.check_input(T.Tensor(a_tr[:1]))
    params = model.params
    opt = AdamW(params, train_config)
    rng = np.random.default_rng(train_config.seed)
    n = len(a_tr)
    steps_per_epoch = math.ceil(n / train_config.batch_size)
    total_steps = steps_per_epoch * train_config.epochs

    initial = float(np.mean(evaluate(model, a_tr, u_tr)))
    history: list[dict] = []
    best_metric = math.inf
    info = {"initial_train_rel_l2": initial, "train_resolution": list(a_tr.shape[1:3])}
    best = Checkpoint(model_config, params.state_dict(), opt.state_dict(), 0, [], train_config,
                      dict(info))
    start = time.perf_counter()
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            params.zero_grad()
            try:
                loss = relative_l2(model.forward(a_tr[idx]), u_tr[idx])
            except NumericError as exc:
                raise DivergenceError(f"non-finite values at step {step}: {exc}", step=step) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {step}", step=step)
            loss.backward()
            clip_gradients(params, train_config.clip_norm)
            opt.step(learning_rate_at(train_config, step, total_steps))
            step += 1
            loss_sum += value * len(idx)
        train_metric = loss_sum / n
        test_metric = float(np.mean(evaluate(model, *te))) if te is not None else float("nan")
        row = {
            "epoch": epoch,
            "train_rel_l2": train_metric,
            "test_rel_l2": test_metric,
            "wall_seconds": time.perf_counter() - start,
        }
        history.append(row)
        if log is not None:
            log(row)
        selector = test_metric if te is not None else train_metric
        if selector < best_metric:
            best_metric = selector
            best = Checkpoint(model_config, params.state_dict(), opt.state_dict(), step, [],
                              train_config, dict(info))
    final = float(np.mean(evaluate(model, a_tr, u_tr)))
    best.history = list(history)
    best.extra.update({"final_train_rel_l2": final, "best_epoch_metric": best_metric})
    return TrainResult(best, history, initial, final, model)


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> str:
    header = {
        "kind": "saot-checkpoint",
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict() if ckpt.train_config else None,
        "step": int(ckpt.step),
        "history": ckpt.history,
        "extra": ckpt.extra,
    }
    tensors = {f"param/{k}": v for k, v in ckpt.params.items()}
    tensors.update({f"optim/{k}": v for k, v in ckpt.optimizer_state.items()})
    return write_container(path, header, tensors)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, checking its tensors against the header's model config."""
    header, tensors = read_container(path)
    if header.get("kind") != "saot-checkpoint":
        raise FormatError(f"{path}: container is not a model checkpoint")
    try:
        model_config = ModelConfig.from_dict(header["model_config"])
        train_config = (
            TrainConfig.from_dict(header["train_config"]) if header.get("train_config") else None
        )
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"{path}: invalid config header ({exc})") from None
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    optim = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
    expected = SAOTModel(model_config).params
    for name, p in expected.items():
        if name not in params:
            raise FormatError(f"{path}: parameter {name!r} required by the config is missing")
        if params[name].shape != p.shape:
            raise FormatError(
                f"{path}: parameter {name!r} has shape {params[name].shape}, "
                f"config implies {p.shape}"
            )
    for name in params:
        if name not in expected:
            raise FormatError(f"{path}: parameter {name!r} is not part of the configured model")
    return Checkpoint(model_config, params, optim, int(header.get("step", 0)),
                      list(header.get("history", [])), train_config, dict(header.get("extra", {})))


def checkpoint_from_model(model: SAOTModel, train_config: TrainConfig | None = None) -> Checkpoint:
    return Checkpoint(model.config, model.params.state_dict(), {}, 0, [], train_config)

