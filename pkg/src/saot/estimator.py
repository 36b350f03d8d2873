"""scikit-learn style wrapper around model construction and training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError
from .model import ModelConfig
from .training import Checkpoint, TrainConfig, evaluate, train


def check_fields(X, name: str = "X") -> np.ndarray:
    """Validate a batch of grid fields and return it as float64 ``(n, H, W, C)``.

    A 3-D array is read as single-channel ``(n, H, W)``.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64,
                    ensure_min_samples=1, input_name=name)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise DimensionError(f"{name} must be (n, H, W) or (n, H, W, C), got shape {X.shape}")
    return X


def check_field_pair(X, y) -> tuple[np.ndarray, np.ndarray]:
    X, y = check_fields(X, "X"), check_fields(y, "y")
    if X.shape[:3] != y.shape[:3]:
        raise DimensionError(
            f"X {X.shape} and y {y.shape} disagree on sample count or grid"
        )
    return X, y


class SAOTRegressor(RegressorMixin, BaseEstimator):
    """Operator regressor mapping input fields to output fields on the same grid.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``random_state`` seeds both initialization and batch order.
    """

    def __init__(self, variant="sa", n_layers=4, width=64, mlp_ratio=1, fa_blocks=4,
                 fa_hidden_ratio=1, fa_activation="modulus", fa_norm="forward",
                 use_locality_conv=True, activation="gelu", epochs=200, learning_rate=1e-3,
                 batch_size=8, schedule="cosine", weight_decay=1e-4, clip_norm=1.0,
                 random_state=0, verbose=False):
        self.variant = variant
        self.n_layers = n_layers
        self.width = width
        self.mlp_ratio = mlp_ratio
        self.fa_blocks = fa_blocks
        self.fa_hidden_ratio = fa_hidden_ratio
        self.fa_activation = fa_activation
        self.fa_norm = fa_norm
        self.use_locality_conv = use_locality_conv
        self.activation = activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.schedule = schedule
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self, in_channels: int, out_channels: int) -> ModelConfig:
        return ModelConfig(
            n_layers=self.n_layers, width=self.width, in_channels=in_channels,
            out_channels=out_channels, mlp_ratio=self.mlp_ratio, fa_blocks=self.fa_blocks,
            fa_hidden_ratio=self.fa_hidden_ratio, fa_activation=self.fa_activation,
            fa_norm=self.fa_norm, use_locality_conv=self.use_locality_conv,
            variant=self.variant, activation=self.activation, seed=self.random_state,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate, batch_size=self.batch_size,
            schedule=self.schedule, weight_decay=self.weight_decay, clip_norm=self.clip_norm,
            seed=self.random_state,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on ``(n, H, W, d_a)`` inputs and ``(n, H, W, d_u)`` targets.

        With a validation pair the kept parameters are those of the epoch
        with the lowest validation error; otherwise the lowest train error.
        """
        X, y = check_field_pair(X, y)
        val = None
        if X_val is not None or y_val is not None:
            if X_val is None or y_val is None:
                raise ValueError("X_val and y_val must be given together")
            val = check_field_pair(X_val, y_val)
        log = print if self.verbose else None
        result = train((X, y), val, self._model_config(X.shape[-1], y.shape[-1]),
                       self._train_config(), log=log)
        self.checkpoint_ = result.checkpoint
        self.model_ = result.checkpoint.build_model()
        self.history_ = result.history
        self.train_resolution_ = X.shape[1:3]
        self.n_parameters_ = self.model_.num_parameters()
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SAOTRegressor":
        """Fitted estimator carrying the checkpoint's model and hyperparameters."""
        mc = ckpt.model_config
        tc = ckpt.train_config or TrainConfig()
        est = cls(
            variant=mc.variant, n_layers=mc.n_layers, width=mc.width, mlp_ratio=mc.mlp_ratio,
            fa_blocks=mc.fa_blocks, fa_hidden_ratio=mc.fa_hidden_ratio,
            fa_activation=mc.fa_activation, fa_norm=mc.fa_norm,
            use_locality_conv=mc.use_locality_conv, activation=mc.activation,
            epochs=tc.epochs, learning_rate=tc.learning_rate, batch_size=tc.batch_size,
            schedule=tc.schedule, weight_decay=tc.weight_decay, clip_norm=tc.clip_norm,
            random_state=mc.seed,
        )
        est.checkpoint_ = ckpt
        est.model_ = ckpt.build_model()
        est.history_ = list(ckpt.history)
        res = ckpt.extra.get("train_resolution")
        est.train_resolution_ = tuple(res) if res else None
        est.n_parameters_ = est.model_.num_parameters()
        return est

    def predict(self, X, batch_size: int = 16) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_fields(X)
        if X.shape[-1] != self.model_.config.in_channels:
            raise DimensionError(
                f"X has {X.shape[-1]} channels, model expects {self.model_.config.in_channels}"
            )
        out = [self.model_.predict(X[lo:lo + batch_size]) for lo in range(0, len(X), batch_size)]
        return np.concatenate(out)

    def relative_errors(self, X, y) -> np.ndarray:
        """Per-sample relative L2 errors."""
        check_is_fitted(self, "model_")
        X, y = check_field_pair(X, y)
        return evaluate(self.model_, X, y)

    def score(self, X, y, sample_weight=None) -> float:
        """Negative mean relative L2 error (greater is better)."""
        errs = self.relative_errors(X, y)
        return -float(np.average(errs, weights=sample_weight))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.two_d_array = False
        tags.input_tags.three_d_array = True
        return tags

