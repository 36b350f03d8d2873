"""Flat ``key = value`` run configuration and the table of every default.

A config file holds one setting per line::

    # desk-scale Darcy run
    n_train = 64
    resolution = 32          # grid points per side
    test_resolutions = [16, 32, 64]
    variant = "sa"
    use_locality_conv = true

Values are Python literals (numbers, quoted strings, lists); ``true`` and
``false`` are accepted as booleans and a bare word is read as a string.
``#`` starts a comment. Unknown keys are rejected.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, fields
from pathlib import Path

from .darcy import GenerationConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class Setting:
    key: str
    section: str
    default: object
    unit: str
    doc: str


# Single source of defaults; the dataclasses are checked against it in tests.
DEFAULTS: tuple[Setting, ...] = (
    Setting("seed", "all", 0, "-", "seed for data draws, initialization and batch order"),
    # data
    Setting("n_train", "data", 64, "samples", "training samples"),
    Setting("n_test", "data", 16, "samples", "test samples per resolution"),
    Setting("resolution", "data", 32, "points/side", "training grid, even"),
    Setting("reference_resolution", "data", 128, "points/side", "grid of the reference solve"),
    Setting("test_resolutions", "data", (16, 32, 64), "points/side", "test grids, even"),
    Setting("smoothness", "data", 2.0, "-", "spectral decay exponent of the random field"),
    Setting("n_modes", "data", 16, "modes/axis", "Fourier modes in the random field"),
    Setting("lo", "data", 3.0, "-", "coefficient where the field is below threshold"),
    Setting("hi", "data", 12.0, "-", "coefficient where the field is above threshold"),
    Setting("threshold", "data", 0.0, "-", "random-field level splitting lo from hi"),
    Setting("forcing", "data", 1.0, "-", "constant source term"),
    # model
    Setting("n_layers", "model", 4, "blocks", "transformer blocks"),
    Setting("width", "model", 64, "channels", "hidden width D"),
    Setting("in_channels", "model", 1, "channels", "input field channels"),
    Setting("out_channels", "model", 1, "channels", "output field channels"),
    Setting("mlp_ratio", "model", 1, "x width", "channel MLP expansion"),
    Setting("fa_blocks", "model", 4, "blocks", "block-diagonal blocks in the Fourier MLP"),
    Setting("fa_hidden_ratio", "model", 1, "x block", "Fourier MLP hidden expansion"),
    Setting("fa_activation", "model", "modulus", "-", "modulus, split or identity"),
    Setting("fa_norm", "model", "forward", "-", "FFT scaling: forward, backward or ortho"),
    Setting("use_locality_conv", "model", True, "-", "3x3 conv on the wavelet subbands"),
    Setting("variant", "model", "sa", "-", "mixer: fa, wa or sa"),
    Setting("activation", "model", "gelu", "-", "channel MLP activation"),
    Setting("ln_eps", "model", 1e-5, "-", "layer norm epsilon"),
    Setting("attn_eps", "model", 1e-6, "-", "linear attention denominator epsilon"),
    # training
    Setting("epochs", "train", 200, "epochs", "passes over the training set"),
    Setting("learning_rate", "train", 1e-3, "-", "peak AdamW step size"),
    Setting("batch_size", "train", 8, "samples", "minibatch size"),
    Setting("schedule", "train", "cosine", "-", "cosine or constant"),
    Setting("weight_decay", "train", 1e-4, "-", "decoupled weight decay"),
    Setting("beta1", "train", 0.9, "-", "first-moment decay"),
    Setting("beta2", "train", 0.999, "-", "second-moment decay"),
    Setting("adam_eps", "train", 1e-8, "-", "AdamW denominator epsilon"),
    Setting("clip_norm", "train", 1.0, "-", "global gradient norm bound"),
    Setting("normalize", "train", True, "-", "fit input/output scaling on the training set"),
)

SECTIONS = {"data": GenerationConfig, "model": ModelConfig, "train": TrainConfig}
_BY_KEY = {s.key: s for s in DEFAULTS}


def parse_value(text: str):
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if text and all(c.isalnum() or c in "_-." for c in text):
            return text
        raise ConfigurationError(f"cannot parse value {text!r}") from None


def _strip_comment(line: str) -> str:
    # a '#' inside a quoted string is kept
    quote = None
    for i, c in enumerate(line):
        if quote:
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c == "#":
            return line[:i]
    return line


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in _BY_KEY:
            raise ConfigurationError(f"{source}:{lineno}: unknown setting {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate setting {key!r}")
        values[key] = coerce(key, parse_value(value))
    return values


def coerce(key: str, value):
    """Convert ``value`` to the type of the setting's default."""
    setting = _BY_KEY.get(key)
    if setting is None:
        raise ConfigurationError(f"unknown setting {key!r}")
    default = setting.default
    bad = ConfigurationError(f"{key}: expected {type(default).__name__}, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise bad
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = (value,)
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise bad
        return tuple(int(v) for v in value)
    if not isinstance(value, str):
        raise bad
    return value


@dataclass
class RunConfig:
    data: GenerationConfig
    model: ModelConfig
    train: TrainConfig

    def to_flat(self) -> dict:
        """Effective settings in table order, suitable for a sidecar echo."""
        out = {}
        for s in DEFAULTS:
            source = self.model if s.section == "all" else getattr(self, s.section)
            out[s.key] = getattr(source, s.key)
        return out


def build_config(values: dict | None = None) -> RunConfig:
    """Defaults overlaid with ``values``; each section is validated."""
    merged = {s.key: s.default for s in DEFAULTS}
    for key, value in (values or {}).items():
        merged[key] = coerce(key, value)
    parts = {}
    for section, cls in SECTIONS.items():
        names = {f.name for f in fields(cls)}
        kwargs = {s.key: merged[s.key] for s in DEFAULTS if s.section == section}
        if "seed" in names:
            kwargs["seed"] = merged["seed"]
        try:
            parts[section] = cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"{section} settings: {exc}") from None
    parts["data"].validate()
    return RunConfig(**parts)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        values = parse_config_text(text, str(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def format_defaults() -> str:
    """The defaults table as a config file with units in comments."""
    lines = []
    section = None
    for s in DEFAULTS:
        if s.section != section:
            section = s.section
            lines.append(f"# [{section}]")
        value = s.default
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        elif isinstance(value, tuple):
            text = "[" + ", ".join(str(v) for v in value) + "]"
        else:
            text = repr(value)
        lines.append(f"{s.key} = {text}  # {s.unit}; {s.doc}")
    return "\n".join(lines) + "\n"
