"""Pydantic models shared across configuration files and on-disk artifacts."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .tools import ConfigError, LOGGER, load_config_mapping


class ScenarioConfig(BaseModel):
    """Synthetic scenario parameters; the seed fixes the full sequence."""

    model_config = ConfigDict(extra="forbid")

    arena_width: float = Field(default=1.0, gt=0)
    arena_height: float = Field(default=1.0, gt=0)
    min_objects: int = Field(default=4, ge=0)
    max_objects: int = Field(default=10, ge=0)
    velocity_scale: float = Field(default=0.01, ge=0, description="Std-dev of per-frame velocity.")
    motion_noise: float = Field(default=0.005, ge=0, description="sigma_m, per-frame position noise.")
    box_width_range: Tuple[float, float] = (0.04, 0.08)
    box_aspect_range: Tuple[float, float] = (1.5, 3.0)
    birth_probability: float = Field(default=0.02, ge=0, le=1)
    death_probability: float = Field(default=0.02, ge=0, le=1)
    descriptor_dim: int = Field(default=16, gt=0)
    latent_spacing: float = Field(default=1.0, ge=0, description="Std-dev of identity latents.")
    descriptor_noise: float = Field(default=0.2, ge=0, description="sigma_a, per-frame descriptor noise.")
    detection_jitter: float = Field(default=0.01, ge=0)
    clutter_rate: float = Field(default=0.05, ge=0, le=1)
    miss_rate: float = Field(default=0.05, ge=0, le=1)
    sequence_length: int = Field(default=100, ge=1)
    fps: int = Field(default=10, ge=1)
    seed: int = 7

    @model_validator(mode="after")
    def _check_ranges(self) -> "ScenarioConfig":
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects must not exceed max_objects")
        for name in ("box_width_range", "box_aspect_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        return self


class ModelConfig(BaseModel):
    """Network widths; every value is fixed at construction time."""

    model_config = ConfigDict(extra="forbid")

    appearance_dim: int = Field(default=32, gt=0, description="D_A")
    motion_dim: int = Field(default=32, gt=0, description="D_M")
    descriptor_dim: int = Field(default=16, gt=0, description="D_desc")
    tracklet_length: int = Field(default=5, ge=1, description="L")
    head_hidden: int = Field(default=64, gt=0)
    encoder_hidden: int = Field(default=32, gt=0)
    gnn_width: int = Field(default=64, gt=0, description="C")
    relation_hidden: int = Field(default=64, gt=0)
    shared_weight: bool = True
    init_seed: int = 7

    @property
    def node_dim(self) -> int:
        return self.appearance_dim + self.motion_dim


class LossConfig(BaseModel):
    """Multi-level matrix loss weights."""

    model_config = ConfigDict(extra="forbid")

    positive_weight: float = Field(default=25.0, gt=0, description="p")
    lambda_a: float = Field(default=1.0, ge=0)
    lambda_m: float = Field(default=1.0, ge=0)
    lambda_s: float = Field(default=1.0, ge=0)
    lambda_y: float = Field(default=1.0, ge=0)
    o2o_columns: bool = False
    bd_mode: Literal["exclusive", "full"] = "exclusive"


class TrainConfig(BaseModel):
    """Adam schedule and artifact locations."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=0.001, gt=0)
    decay_factor: float = Field(default=10.0, gt=0)
    decay_interval: int = Field(default=2000, gt=0)
    iterations: int = Field(default=5000, gt=0)
    weight_decay: float = Field(default=0.0005, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    clip_norm: float = Field(default=5.0, gt=0)
    use_gnn: bool = True
    prefetch: int = Field(default=8, ge=1)
    log_every: int = Field(default=100, gt=0)
    data_path: Optional[Path] = None
    checkpoint_path: Path = Path("runs/model.ckpt")
    history_path: Path = Path("runs/history.csv")
    seed: int = 7


class TrackerConfig(BaseModel):
    """Online tracker settings; windows derive from fps."""

    model_config = ConfigDict(extra="forbid")

    fps: int = Field(default=10, ge=1)
    solver: Literal["learned", "affinity", "hungarian-baseline", "oracle"] = "learned"
    checkpoint_path: Optional[Path] = None
    birth_death_threshold: float = Field(default=0.5, description="theta_bd on sigmoid(S)")
    backfill_births: bool = True
    birth_window_override: Optional[int] = Field(default=None, ge=1)
    death_window_override: Optional[int] = Field(default=None, ge=1)

    @property
    def birth_window(self) -> int:
        """T_b = fps / 2 rounded to nearest, floor 1."""

        if self.birth_window_override is not None:
            return self.birth_window_override
        return max(1, int(round(self.fps / 2)))

    @property
    def death_window(self) -> int:
        """T_d = fps / 6 rounded to nearest, floor 1."""

        if self.death_window_override is not None:
            return self.death_window_override
        return max(1, int(round(self.fps / 6)))


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iou_threshold: float = Field(default=0.5, gt=0, le=1)
    mostly_tracked: float = Field(default=0.8, ge=0, le=1)
    mostly_lost: float = Field(default=0.2, ge=0, le=1)
    workers: int = Field(default=4, ge=1)


class AblationConfig(BaseModel):
    """Ablation run size plus the scenario fields it overrides.

    The overrides make identities harder to tell apart than the default
    scenario so the variants separate.
    """

    model_config = ConfigDict(extra="forbid")

    train_sequences: int = Field(default=4, ge=1)
    test_sequences: int = Field(default=3, ge=1)
    iterations: int = Field(default=4000, gt=0)
    latent_spacing: float = Field(default=0.5, ge=0)
    descriptor_noise: float = Field(default=0.3, ge=0)
    clutter_rate: float = Field(default=0.15, ge=0, le=1)
    miss_rate: float = Field(default=0.1, ge=0, le=1)

    def scenario_overrides(self) -> Dict[str, float]:
        return {
            "latent_spacing": self.latent_spacing,
            "descriptor_noise": self.descriptor_noise,
            "clutter_rate": self.clutter_rate,
            "miss_rate": self.miss_rate,
        }


class RunConfig(BaseModel):
    """Self-describing configuration for one CLI run."""

    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    output_dir: Path = Path("runs")

    @model_validator(mode="after")
    def _check_descriptor(self) -> "RunConfig":
        if self.model.descriptor_dim != self.scenario.descriptor_dim:
            raise ValueError("model.descriptor_dim must equal scenario.descriptor_dim")
        return self

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        return self.model_copy(
            update={
                "scenario": self.scenario.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
            }
        )


def load_run_config(path: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse a configuration file, materialising every default."""

    payload: Dict[str, Any] = load_config_mapping(path)
    for key, value in (overrides or {}).items():
        payload.setdefault(key, {})
        if isinstance(value, Mapping):
            payload[key] = {**payload[key], **value}
        else:
            payload[key] = value
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(part) for part in err.get('loc', ()))}: {err.get('msg', 'invalid')}"
            for err in exc.errors()
        )
        LOGGER.warning("[Config] validation failed | %s", details)
        raise ConfigError(details) from exc


class GroundTruthObject(BaseModel):
    """One ground-truth object in a frame record."""

    id: int = Field(ge=0)
    box: Tuple[float, float, float, float]
    descriptor: List[float]


class DetectionRecord(BaseModel):
    """One detection; clutter detections carry no ground-truth identity."""

    box: Tuple[float, float, float, float]
    descriptor: List[float]
    is_clutter: bool = False
    gt_id: Optional[int] = None

    @model_validator(mode="after")
    def _clutter_has_no_identity(self) -> "DetectionRecord":
        if self.is_clutter and self.gt_id is not None:
            raise ValueError("clutter detections cannot carry a gt_id")
        return self


class FrameRecord(BaseModel):
    """One line of a sequence file."""

    frame: int = Field(ge=0)
    gt: List[GroundTruthObject] = Field(default_factory=list)
    detections: List[DetectionRecord] = Field(default_factory=list)
    matches: List[Tuple[int, int]] = Field(
        default_factory=list,
        description="(row of previous frame's gt, detection index) pairs.",
    )


class SequenceHeader(BaseModel):
    header: ScenarioConfig


class SolveRequest(BaseModel):
    """Input of the ``solve`` command: a weight matrix and the birth/death threshold."""

    model_config = ConfigDict(extra="forbid")

    S: List[List[float]]
    theta_bd: float = 0.5

    @model_validator(mode="after")
    def _rectangular(self) -> "SolveRequest":
        if not self.S or not self.S[0]:
            raise ValueError("S must have at least one row and one column")
        if any(len(row) != len(self.S[0]) for row in self.S):
            raise ValueError("S rows must share one length")
        return self


class MetricsReport(BaseModel):
    """CLEAR-MOT and identity scorecard."""

    mota: float = Field(le=1.0)
    motp: float = Field(ge=0.0, le=1.0)
    idf1: float = Field(ge=0.0, le=1.0)
    idp: float = Field(ge=0.0, le=1.0)
    idr: float = Field(ge=0.0, le=1.0)
    id_switches: int = Field(ge=0)
    mostly_tracked: float = Field(ge=0.0, le=1.0)
    mostly_lost: float = Field(ge=0.0, le=1.0)
    fragmentations: int = Field(ge=0)
    false_positives: int = Field(ge=0)
    false_negatives: int = Field(ge=0)
    gt_count: int = Field(ge=0)
    matches: int = Field(ge=0)
    predictions: int = Field(ge=0)
    gt_tracks: int = Field(ge=0)

    def as_table(self) -> str:
        rows = [
            ("MOTA", f"{self.mota:.4f}"),
            ("MOTP", f"{self.motp:.4f}"),
            ("IDF1", f"{self.idf1:.4f}"),
            ("IDP", f"{self.idp:.4f}"),
            ("IDR", f"{self.idr:.4f}"),
            ("ID Sw.", str(self.id_switches)),
            ("MT", f"{100 * self.mostly_tracked:.1f}%"),
            ("ML", f"{100 * self.mostly_lost:.1f}%"),
            ("Frag", str(self.fragmentations)),
            ("FP", str(self.false_positives)),
            ("FN", str(self.false_negatives)),
            ("GT", str(self.gt_count)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


__all__ = [
    "AblationConfig",
    "DetectionRecord",
    "EvalConfig",
    "FrameRecord",
    "GroundTruthObject",
    "LossConfig",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "ScenarioConfig",
    "SequenceHeader",
    "SolveRequest",
    "TrackerConfig",
    "TrainConfig",
    "load_run_config",
]
