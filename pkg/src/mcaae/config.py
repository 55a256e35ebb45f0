"""Flat key = value run configuration.

One `key = value` pair per line; sections are dotted prefixes; `#` starts
a comment. Every run writes its resolved configuration next to its
outputs, and rerunning from that file reproduces the run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_str(text: str) -> str:
    return text


def _parse_float_pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo,hi', got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in text.split(",") if p.strip())


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


@dataclass
class RunConfig:
    seed: int = 0
    dataset_kind: str = "synthetic"  # synthetic | idx | image-dir
    dataset_synth_kind: str = "bars-vs-blobs"
    dataset_n_per_class: int = 250
    dataset_test_n_per_class: int = 100
    dataset_image_size: int = 64
    dataset_images_path: str = ""
    dataset_labels_path: str = ""
    dataset_dir: str = ""
    model_latent_dim: int = 10
    model_hidden_widths: tuple[int, ...] = (256, 64)
    train_epochs: int = 2000
    train_batch_size: int = 64
    train_learning_rate: float = 1e-4
    train_keep_prob: float = 0.67
    augment_blur_sigma: tuple[float, float] = (0.0, 1.5)
    augment_noise_std: tuple[float, float] = (0.0, 0.1)
    augment_brightness: tuple[float, float] = (-0.1, 0.1)
    augment_contrast: tuple[float, float] = (0.9, 1.1)
    classifier_epochs: int = 500
    infer_m_inferences: int = 20
    infer_n_recursions: int = 2
    infer_threshold: float = -1.0  # < 0 means unset
    eval_ood: tuple[str, ...] = ("triangles",)
    eval_reference_out: str = ""
    eval_target_total: int = 200
    eval_bins: int = 20
    analyze_orbit_k: int = 7
    analyze_strips: int = 4
    analyze_basin_radius: float = 0.1
    analyze_basin_trials: int = 20
    analyze_max_samples: int = 0  # 0 = all

    @property
    def threshold(self) -> float | None:
        return None if self.infer_threshold < 0 else self.infer_threshold

    def validate(self) -> None:
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.dataset_kind not in ("synthetic", "idx", "image-dir"):
            raise ValidationError(f"unknown dataset.kind {self.dataset_kind!r}")
        if self.dataset_kind == "idx":
            for p in (self.dataset_images_path, self.dataset_labels_path):
                if not p or not Path(p).exists():
                    raise ValidationError(f"dataset path does not exist: {p!r}")
        if self.dataset_kind == "image-dir":
            if not self.dataset_dir or not Path(self.dataset_dir).is_dir():
                raise ValidationError(f"dataset.dir does not exist: {self.dataset_dir!r}")
        if self.infer_m_inferences < 1:
            raise ValidationError("infer.m_inferences must be >= 1")
        if self.infer_n_recursions < 0:
            raise ValidationError("infer.n_recursions must be >= 0")
        if self.infer_threshold >= 0 and self.infer_threshold > 1:
            raise ValidationError("infer.threshold must be in [0, 1]")
        if not 0.0 < self.train_keep_prob <= 1.0:
            raise ValidationError("train.keep_prob must be in (0, 1]")
        if self.train_epochs < 0 or self.classifier_epochs < 0:
            raise ValidationError("epoch counts must be non-negative")


# config key -> value parser; attribute names swap the first '.' for '_'
_SCHEMA = {
    "seed": _parse_int,
    "dataset.kind": _parse_str,
    "dataset.synth_kind": _parse_str,
    "dataset.n_per_class": _parse_int,
    "dataset.test_n_per_class": _parse_int,
    "dataset.image_size": _parse_int,
    "dataset.images_path": _parse_str,
    "dataset.labels_path": _parse_str,
    "dataset.dir": _parse_str,
    "model.latent_dim": _parse_int,
    "model.hidden_widths": _parse_int_list,
    "train.epochs": _parse_int,
    "train.batch_size": _parse_int,
    "train.learning_rate": _parse_float,
    "train.keep_prob": _parse_float,
    "augment.blur_sigma": _parse_float_pair,
    "augment.noise_std": _parse_float_pair,
    "augment.brightness": _parse_float_pair,
    "augment.contrast": _parse_float_pair,
    "classifier.epochs": _parse_int,
    "infer.m_inferences": _parse_int,
    "infer.n_recursions": _parse_int,
    "infer.threshold": _parse_float,
    "eval.ood": _parse_str_list,
    "eval.reference_out": _parse_str,
    "eval.target_total": _parse_int,
    "eval.bins": _parse_int,
    "analyze.orbit_k": _parse_int,
    "analyze.strips": _parse_int,
    "analyze.basin_radius": _parse_float,
    "analyze.basin_trials": _parse_int,
    "analyze.max_samples": _parse_int,
}


def _schema() -> dict[str, tuple[str, object]]:
    """config key -> (attribute name, parser)."""
    return {key: (key.replace(".", "_", 1), parser) for key, parser in _SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    schema = _schema()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise ValidationError(f"{source}:{lineno}: unknown config key {key!r}")
        attr, parser = schema[key]
        try:
            setattr(cfg, attr, parser(value))
        except ValueError as exc:
            raise ValidationError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def write_resolved_config(path, cfg: RunConfig) -> None:
    lines = []
    for key, (attr, _) in sorted(_schema().items()):
        lines.append(f"{key} = {_fmt(getattr(cfg, attr))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
