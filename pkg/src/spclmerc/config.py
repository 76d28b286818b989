"""INI experiment configs with ``section.key=value`` overrides.

Sections: ``[data]`` (optional JSONL ``path``), ``[synth]``, ``[train]``, ``[spcl]``.
Any key not listed in :data:`SCHEMA` is rejected.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SynthConfig
from .exceptions import ConfigurationError
from .trainer import TrainConfig


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _strs(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


# dotted key -> (target, attribute, parser); "synth:dims"/"synth:snr" address dict entries
SCHEMA = {
    "data.path": ("data", "path", str),
    "synth.class_count": ("synth", "class_count", int),
    "synth.dim_audio": ("synth:dims", "audio", int),
    "synth.dim_text": ("synth:dims", "text", int),
    "synth.dim_visual": ("synth:dims", "visual", int),
    "synth.snr_audio": ("synth:snr", "audio", float),
    "synth.snr_text": ("synth:snr", "text", float),
    "synth.snr_visual": ("synth:snr", "visual", float),
    "synth.label_stickiness": ("synth", "label_stickiness", float),
    "synth.conversation_count": ("synth", "conversation_count", int),
    "synth.valid_count": ("synth", "valid_count", int),
    "synth.test_count": ("synth", "test_count", int),
    "synth.length_min": ("synth:length", 0, int),
    "synth.length_max": ("synth:length", 1, int),
    "synth.seed": ("synth", "seed", int),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.optimizer": ("train", "optimizer", str),
    "train.hidden": ("train", "hidden", _ints),
    "train.modalities": ("train", "modalities", _strs),
    "train.seed": ("train", "seed", int),
    "train.eval_every": ("train", "eval_every", int),
    "train.holdout_fraction": ("train", "holdout_fraction", float),
    "train.shuffle": ("train", "shuffle", _bool),
    "spcl.enabled": ("train", "spcl_enabled", _bool),
    "spcl.pacing": ("train", "pacing", str),
    "spcl.regularizer": ("train", "regularizer", str),
    "spcl.difficulty_mode": ("train", "difficulty_mode", str),
    "spcl.normalize_conv_score": ("train", "normalize_conv_score", _bool),
    "spcl.epsilon": ("train", "epsilon", float),
    "spcl.alpha": ("train", "alpha", float),
    "spcl.lambda_min": ("train", "lambda_min", float),
    "spcl.lambda_max": ("train", "lambda_max", float),
    "spcl.ma_alpha": ("train", "ma_alpha", float),
    "spcl.ma_t0": ("train", "ma_t0", int),
    "spcl.ma_literal_sum": ("train", "ma_literal_sum", _bool),
    "spcl.c0": ("train", "c0", float),
}


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data_path: Path | None = None
    source_text: str | None = None
    values: dict = field(default_factory=dict)

    def with_seed(self, seed):
        """Copy with both the training seed and the synthetic-data seed set to ``seed``."""
        return parse_config_text(self.render(), {"train.seed": str(seed), "synth.seed": str(seed)})

    def render(self):
        """Canonical INI text of the effective configuration."""
        return render_values(self.values)


def render_values(values):
    parser = configparser.ConfigParser()
    for key in SCHEMA:
        if key in values:
            section, name = key.split(".", 1)
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, name, values[key])
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def default_values():
    t, s = TrainConfig(), SynthConfig()
    out = {}
    for key, (target, attr, _) in SCHEMA.items():
        if target == "data":
            continue
        if target == "train":
            v = getattr(t, attr)
        elif target == "synth":
            v = getattr(s, attr)
        elif target == "synth:dims":
            v = s.modality_dims[attr]
        elif target == "synth:snr":
            v = s.snr[attr]
        else:
            v = s.length_range[attr]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        out[key] = str(v)
    return out


def _parse_overrides(overrides):
    if overrides is None:
        return {}
    if isinstance(overrides, dict):
        return {k: str(v) for k, v in overrides.items()}
    out = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_config_text(text, overrides=None):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unparseable config: {exc}") from None
    values = default_values()
    for section in parser.sections():
        for name, value in parser.items(section):
            key = f"{section}.{name}"
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = value
    for key, value in _parse_overrides(overrides).items():
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r} in override")
        values[key] = value
    return build(values, source_text=text)


def parse_config(path, overrides=None):
    """Read ``path`` (INI), apply overrides, validate, and return an :class:`ExperimentConfig`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    cfg = parse_config_text(text, overrides)
    if cfg.data_path is not None and not cfg.data_path.is_absolute():
        cfg.data_path = (path.parent / cfg.data_path).resolve()
        cfg.values["data.path"] = str(cfg.data_path)
    return cfg


def build(values, source_text=None):
    train_kw, synth_kw = {}, {}
    dims, snr, length = dict(SynthConfig().modality_dims), dict(SynthConfig().snr), list(SynthConfig().length_range)
    data_path = None
    for key, raw in values.items():
        target, attr, conv = SCHEMA[key]
        try:
            value = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{key}: cannot parse {raw!r} ({exc})") from None
        if target == "data":
            data_path = Path(value) if value else None
        elif target == "train":
            train_kw[attr] = value
        elif target == "synth":
            synth_kw[attr] = value
        elif target == "synth:dims":
            dims[attr] = value
        elif target == "synth:snr":
            snr[attr] = value
        else:
            length[attr] = value
    train = TrainConfig(**train_kw)
    synth = SynthConfig(**synth_kw, modality_dims=dims, snr=snr, length_range=tuple(length))
    _validate_named(train, synth)
    return ExperimentConfig(train, synth, data_path, source_text, dict(values))


def _validate_named(train, synth):
    # map TrainConfig attribute errors back to their config key
    try:
        train.validate()
    except ConfigurationError as exc:
        msg = str(exc)
        for key, (target, attr, _) in SCHEMA.items():
            if target == "train" and msg.startswith((f"{attr} ", f"{attr}=")):
                raise ConfigurationError(f"{key}: {msg}") from None
        raise
    synth.validate()
