"""Declarative experiment configuration: one JSON file drives generation,
training, evaluation and ablation. Flags override file values; every
section validates before any work starts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import BlockConfig, ModelConfig
from .synthetic import ClassDistribution, default_class_distribution
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass
class GeneratorConfig:
    n_subjects: int = 100
    frames_min: int = 90
    frames_max: int = 150
    class_distribution: ClassDistribution = field(
        default_factory=default_class_distribution)

    def validate(self):
        if self.n_subjects < 2:
            raise ConfigError("generator.n_subjects must be >= 2")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError("generator.frames_min/max must satisfy "
                              "1 <= min <= max")


@dataclass
class EvaluationConfig:
    threshold: float = 0.5
    view: int | None = None  # None = all views

    def validate(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("evaluation.threshold must lie in [0, 1]")
        if self.view is not None and self.view not in (1, 2, 3, 4, 5, 6):
            raise ConfigError("evaluation.view must be 1-6 or null")


@dataclass
class AblationConfig:
    temporal_kernels: tuple[int, ...] = (3, 5, 7)
    triplet: tuple[bool, ...] = (True, False)
    steps: int = 500

    def validate(self):
        if not self.temporal_kernels:
            raise ConfigError("ablation.temporal_kernels must be non-empty")
        for tau in self.temporal_kernels:
            if tau % 2 == 0 or tau < 1:
                raise ConfigError(f"ablation temporal kernel {tau} must be odd")
        if self.steps < 1:
            raise ConfigError("ablation.steps must be >= 1")


@dataclass
class ExperimentConfig:
    seed: int = 7
    data_dir: Path = Path("runs/data")
    out_dir: Path = Path("runs/exp")
    train_fraction: float = 831.0 / 1227.0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = None  # filled by default_experiment_config
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self):
        self.generator.validate()
        self.evaluation.validate()
        self.ablation.validate()
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc
        try:
            self.training.validate()
        except ValueError as exc:
            raise ConfigError(f"training: {exc}") from exc
        if self.model.clip_len != self.training.clip_len:
            raise ConfigError("model.clip_len must equal training.clip_len")


def default_experiment_config() -> ExperimentConfig:
    """Desk-scale defaults: reduced channels and clip length sized for a
    single-core machine, with the full-scale schedule swapped for the scaled
    5000-step run."""
    from .model import desk_config

    model = desk_config()
    training = TrainConfig(steps=5000, decay_step=4000, clip_len=model.clip_len,
                           checkpoint_every=1000)
    cfg = ExperimentConfig(model=model, training=training)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def _dist_to_doc(dist: ClassDistribution) -> dict:
    return {"risk": {k: list(v) for k, v in dist.risk.items()},
            "control": {k: list(v) for k, v in dist.control.items()}}


def _dist_from_doc(doc: dict) -> ClassDistribution:
    return ClassDistribution(
        risk={k: (float(v[0]), float(v[1])) for k, v in doc["risk"].items()},
        control={k: (float(v[0]), float(v[1])) for k, v in doc["control"].items()})


def config_to_doc(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "data_dir": str(cfg.data_dir),
        "out_dir": str(cfg.out_dir),
        "train_fraction": cfg.train_fraction,
        "generator": {
            "n_subjects": cfg.generator.n_subjects,
            "frames_min": cfg.generator.frames_min,
            "frames_max": cfg.generator.frames_max,
            "class_distribution": _dist_to_doc(cfg.generator.class_distribution),
        },
        "model": {
            "clip_len": cfg.model.clip_len,
            "frame_h": cfg.model.frame_h,
            "frame_w": cfg.model.frame_w,
            "leaky_slope": cfg.model.leaky_slope,
            "share_local_weights": cfg.model.share_local_weights,
            "blocks": [
                {
                    "in_channels": b.in_channels,
                    "out_channels": b.out_channels,
                    "parts": b.parts,
                    "spatial_kernel": b.spatial_kernel,
                    "temporal_kernel": b.temporal_kernel,
                    "tcl_groups": b.tcl_groups,
                    "scl_enabled": b.scl_enabled,
                }
                for b in cfg.model.blocks
            ],
        },
        "training": {
            "steps": cfg.training.steps,
            "lr": cfg.training.lr,
            "decay_step": cfg.training.decay_step,
            "decay_factor": cfg.training.decay_factor,
            "weight_decay": cfg.training.weight_decay,
            "subjects_per_batch": cfg.training.subjects_per_batch,
            "clips_per_subject": cfg.training.clips_per_subject,
            "clip_len": cfg.training.clip_len,
            "margin": cfg.training.margin,
            "use_triplet": cfg.training.use_triplet,
            "checkpoint_every": cfg.training.checkpoint_every,
            "keep_checkpoints": cfg.training.keep_checkpoints,
        },
        "evaluation": {"threshold": cfg.evaluation.threshold,
                       "view": cfg.evaluation.view},
        "ablation": {"temporal_kernels": list(cfg.ablation.temporal_kernels),
                     "triplet": list(cfg.ablation.triplet),
                     "steps": cfg.ablation.steps},
    }


def _take(doc: dict, section: str, defaults, builder):
    sub = doc.get(section)
    if sub is None:
        return defaults
    if not isinstance(sub, dict):
        raise ConfigError(f"{section} section must be an object")
    try:
        return builder(sub)
    except ConfigError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_doc(doc: dict) -> ExperimentConfig:
    base = default_experiment_config()

    def build_generator(sub):
        dist = (base.generator.class_distribution
                if "class_distribution" not in sub
                else _dist_from_doc(sub["class_distribution"]))
        return GeneratorConfig(
            n_subjects=int(sub.get("n_subjects", base.generator.n_subjects)),
            frames_min=int(sub.get("frames_min", base.generator.frames_min)),
            frames_max=int(sub.get("frames_max", base.generator.frames_max)),
            class_distribution=dist)

    def build_model(sub):
        blocks = tuple(BlockConfig(
            in_channels=int(b["in_channels"]),
            out_channels=int(b["out_channels"]),
            parts=int(b["parts"]),
            spatial_kernel=int(b.get("spatial_kernel", 3)),
            temporal_kernel=int(b.get("temporal_kernel", 5)),
            tcl_groups=None if b.get("tcl_groups") is None else int(b["tcl_groups"]),
            scl_enabled=bool(b.get("scl_enabled", True)),
        ) for b in sub["blocks"]) if "blocks" in sub else base.model.blocks
        if len(blocks) != 3:
            raise ConfigError("model.blocks must list exactly 3 blocks")
        return ModelConfig(
            blocks=blocks,
            clip_len=int(sub.get("clip_len", base.model.clip_len)),
            frame_h=int(sub.get("frame_h", base.model.frame_h)),
            frame_w=int(sub.get("frame_w", base.model.frame_w)),
            leaky_slope=float(sub.get("leaky_slope", base.model.leaky_slope)),
            share_local_weights=bool(sub.get("share_local_weights", True)))

    def build_training(sub):
        t = base.training
        return TrainConfig(
            steps=int(sub.get("steps", t.steps)),
            lr=float(sub.get("lr", t.lr)),
            decay_step=int(sub.get("decay_step", t.decay_step)),
            decay_factor=float(sub.get("decay_factor", t.decay_factor)),
            weight_decay=float(sub.get("weight_decay", t.weight_decay)),
            subjects_per_batch=int(sub.get("subjects_per_batch",
                                           t.subjects_per_batch)),
            clips_per_subject=int(sub.get("clips_per_subject",
                                          t.clips_per_subject)),
            clip_len=int(sub.get("clip_len", t.clip_len)),
            margin=float(sub.get("margin", t.margin)),
            use_triplet=bool(sub.get("use_triplet", t.use_triplet)),
            seed=int(sub.get("seed", t.seed)),
            checkpoint_every=int(sub.get("checkpoint_every", t.checkpoint_every)),
            keep_checkpoints=int(sub.get("keep_checkpoints", t.keep_checkpoints)))

    def build_evaluation(sub):
        return EvaluationConfig(
            threshold=float(sub.get("threshold", 0.5)),
            view=None if sub.get("view") is None else int(sub["view"]))

    def build_ablation(sub):
        return AblationConfig(
            temporal_kernels=tuple(int(t) for t in
                                   sub.get("temporal_kernels", (3, 5, 7))),
            triplet=tuple(bool(t) for t in sub.get("triplet", (True, False))),
            steps=int(sub.get("steps", 500)))

    cfg = ExperimentConfig(
        seed=int(doc.get("seed", base.seed)),
        data_dir=Path(doc.get("data_dir", base.data_dir)),
        out_dir=Path(doc.get("out_dir", base.out_dir)),
        train_fraction=float(doc.get("train_fraction", base.train_fraction)),
        generator=_take(doc, "generator", base.generator, build_generator),
        model=_take(doc, "model", base.model, build_model),
        training=_take(doc, "training", base.training, build_training),
        evaluation=_take(doc, "evaluation", base.evaluation, build_evaluation),
        ablation=_take(doc, "ablation", base.ablation, build_ablation),
    )
    cfg.validate()
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_doc(doc)


def save_experiment_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_doc(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
