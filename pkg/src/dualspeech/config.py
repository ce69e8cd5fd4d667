"""Run configuration: flat "key = value" files with typed parsing.

Defaults follow the published recipe wherever it pins a value (4-layer
stacks at 256/256/1024, 80 mel bins, masking probability 0.3, group
size 32, 200 paired clips, 12500/300/300 split).  Unknown keys are
errors so sweep scripts cannot silently typo a knob.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    num_layers: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    num_heads: int = 4
    dropout: float = 0.1
    prenet_hidden: int = 256
    prenet_dropout: float = 0.5
    postnet_hidden: int = 256
    postnet_layers: int = 5
    postnet_kernel: int = 5
    max_len: int = 2048
    # dsp
    sample_rate: int = 16000
    frame_ms: float = 50.0
    hop_ms: float = 12.5
    fft_size: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    griffin_lim_iters: int = 60
    # corpus
    train_count: int = 12500
    val_count: int = 300
    test_count: int = 300
    paired_count: int = 200
    disjoint_half_pools: bool = False
    group_size: int = 32
    text_mode: str = "phonemes"  # "phonemes" (toy) or "words" (lexicon)
    # training
    mask_prob: float = 0.3
    swap_window: int = 0
    bce_pos_weight: float = 5.0
    warmup_steps: int = 4000
    lr_factor: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_epsilon: float = 1e-9
    steps: int = 10000
    checkpoint_interval: int = 1000
    seed: int = 1234
    enable_dae: bool = True
    enable_dt: bool = True
    enable_bsm: bool = True
    text_max_ratio: float = 0.5
    speech_max_ratio: float = 8.0
    # paths (usually given on the command line)
    data_dir: str = ""
    out_dir: str = ""

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key, text):
    ftype = _FIELDS[key]
    text = text.strip()
    if ftype == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if ftype == "int":
            return int(text)
        if ftype == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {ftype}, got {text!r}") from None
    return text


def parse_config(text, base=None):
    cfg = base or RunConfig()
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(key, value)
    return cfg.replace(**updates)


def load_config(path, base=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


def config_text(cfg):
    """Fully-resolved echo; reloading it reproduces the config exactly."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg):
    Path(path).write_text(config_text(cfg), encoding="utf-8")
