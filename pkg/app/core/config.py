"""
Configuration for the SkyTrack tracking engine.
All defaults are defined here as module constants; the pydantic models below
validate them and the flat run-config loader maps `key = value` files onto them.
"""

import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigError, DataIOError

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"Environment variable {name} must be an integer, got {raw!r}.\n"
            f"  - Unset it to use the default ({default})\n"
            f"  - Or set it to a whole number"
        )


# Runtime settings
LOG_LEVEL = os.getenv("SKYTRACK_LOG_LEVEL", "INFO")
ABLATE_WORKERS = _env_int("SKYTRACK_ABLATE_WORKERS", 1)
DEFAULT_CONFIG_PATH = os.getenv("SKYTRACK_CONFIG")  # used when --config is omitted

# Frame geometry
FRAME_WIDTH = 1920
FRAME_HEIGHT = 1080
FRAME_RATE = 30.0  # frames per second, converts frame gaps to seconds for decay weights

# Confidence cascade
HIGH_CONFIDENCE_THRESHOLD = 0.5  # t_h
LOW_CONFIDENCE_THRESHOLD = 0.1   # t_l

# Joint cost weights: overlap, center distance, motion, relation
COST_WEIGHTS = (0.3, 0.3, 0.2, 0.2)
# Motion term weights: speed, direction, acceleration
MOTION_WEIGHTS = (0.4, 0.4, 0.2)
GATE_MAX_COST = 0.8
DISTANCE_SCALE_FACTOR = 2.0        # s_ij = mean box side * factor
SPEED_COST_FLOOR = 50.0            # px/frame, denominator floor of the speed term
SPEED_COST_OFFSET = 2.0
DIRECTION_COST_SCALE = math.pi / 2
ACCELERATION_COST_SCALE = 30.0     # px/frame^2
RELATION_DEDUP_IOU = 0.3           # a track already covered by a detection adds no extra point

# Memory recovery
DECAY_RATE = 0.1                   # gamma
RECOVERY_THRESHOLD = 0.6           # tau_t
PMR_HISTORY_WINDOW = 10
GMM_COVARIANCE_FLOOR = 1e-3
GMM_MAX_ITER = 50
GMM_TOLERANCE = 1e-4
# Per-dimension scales applied to features before mixture fitting
PMR_SCALE_POSITION = 320.0         # px
PMR_SCALE_RELATIVE = 1.0
PMR_SCALE_VELOCITY = 100.0         # px/frame
PMR_SCALE_DIRECTION = 100.0        # rad
PMR_SCALE_DECAY = 8.0

# Track lifecycle
MIN_HITS = 2
MAX_MISSES = 1
MAX_LOST_AGE = 30
HISTORY_MAX = 30
STABLE_HITS = 3

# Kalman noise, as fractions of box height
POSITION_NOISE_WEIGHT = 1.0 / 20
VELOCITY_NOISE_WEIGHT = 1.0 / 160
MEASUREMENT_NOISE_WEIGHT = 1.0 / 20
MIN_NOISE_HEIGHT = 1.0

# Global/local scheduling
GLOBAL_FRAMES = 30                 # N_g
LOCAL_FRAMES = 120                 # N_l
LOCAL_MISS_LIMIT = 5               # N_m
ROI_MERGE_IOU = 0.2                # tau_o
ROI_SPLIT_DISTANCE = 700.0         # tau_d, px
SAFE_ZONE_FRACTION = 0.8           # tau_s
ROI_SIZE = 300.0
SAFE_ZONE_MARGIN = 2.0             # px added when expanding around members

# STFF
FUSION_ALPHA = 0.1
STFF_CHANNELS = 8
STFF_SIZE = 16
STFF_WINDOW = 4
STFF_HEADS = 2
STFF_MOTION_DIM = 4

# Simulator
SIM_TARGETS = 3
SIM_FRAMES = 600
SIM_SIZE_RANGE = (8.0, 40.0)
SIM_SPEED_RANGE = (2.0, 8.0)
SIM_MOTION_MIX = {"cv": 0.4, "hover": 0.2, "dive": 0.1, "maneuver": 0.3}
SIM_MANEUVER_RATE = 1.0 / 40
SIM_BORDER_MARGIN = 50.0
HOVER_REVERSION = 0.1
HOVER_JITTER_STD = 0.6
HOVER_STEP_CAP = 1.9               # px/frame, strictly below the 2 px hover bound
DIVE_INITIAL_SPEED = 0.5
DIVE_ACCELERATION = 0.05

# Detection noise
P_MISS_GLOBAL = 0.15
P_MISS_LOCAL = 0.05
LOC_NOISE_STD = 1.0
SIZE_NOISE_STD = 0.5
FP_RATE = 0.5
CONF_BASE = 0.9
CONF_PENALTY = 0.5
CONF_FLOOR = 0.05
CLUTTER_CONF_RANGE = (0.05, 0.45)

# Metrics
MATCH_IOU_THRESHOLD = 0.5
HOTA_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))


class TrackerConfig(BaseModel):
    """Tracker, scheduler and recovery parameters."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    t_h: float = Field(HIGH_CONFIDENCE_THRESHOLD, ge=0.0, le=1.0)
    t_l: float = Field(LOW_CONFIDENCE_THRESHOLD, ge=0.0, le=1.0)
    omega_1: float = Field(COST_WEIGHTS[0], ge=0.0, le=1.0)
    omega_2: float = Field(COST_WEIGHTS[1], ge=0.0, le=1.0)
    omega_3: float = Field(COST_WEIGHTS[2], ge=0.0, le=1.0)
    omega_4: float = Field(COST_WEIGHTS[3], ge=0.0, le=1.0)
    beta_1: float = Field(MOTION_WEIGHTS[0], ge=0.0, le=1.0)
    beta_2: float = Field(MOTION_WEIGHTS[1], ge=0.0, le=1.0)
    beta_3: float = Field(MOTION_WEIGHTS[2], ge=0.0, le=1.0)
    gamma: float = Field(DECAY_RATE, ge=0.0)
    tau_t: float = Field(RECOVERY_THRESHOLD, ge=0.0, le=1.0)
    n_g: int = Field(GLOBAL_FRAMES, ge=1)
    n_l: int = Field(LOCAL_FRAMES, ge=1)
    n_m: int = Field(LOCAL_MISS_LIMIT, ge=1)
    tau_o: float = Field(ROI_MERGE_IOU, ge=0.0, le=1.0)
    tau_d: float = Field(ROI_SPLIT_DISTANCE, gt=0.0)
    tau_s: float = Field(SAFE_ZONE_FRACTION, gt=0.0, le=1.0)
    alpha: float = Field(FUSION_ALPHA, ge=0.0, le=1.0)
    gate_max_cost: float = Field(GATE_MAX_COST, gt=0.0)
    max_lost_age: int = Field(MAX_LOST_AGE, ge=1)
    h_max: int = Field(HISTORY_MAX, ge=2)
    min_hits: int = Field(MIN_HITS, ge=1)
    max_misses: int = Field(MAX_MISSES, ge=1)
    stable_hits: int = Field(STABLE_HITS, ge=1)
    activate_first_frame: bool = True
    roi_size: float = Field(ROI_SIZE, gt=0.0)
    frame_width: int = Field(FRAME_WIDTH, ge=1)
    frame_height: int = Field(FRAME_HEIGHT, ge=1)
    frame_rate: float = Field(FRAME_RATE, gt=0.0)
    pmr_window: int = Field(PMR_HISTORY_WINDOW, ge=1)
    pmr_scale_position: float = Field(PMR_SCALE_POSITION, gt=0.0)
    pmr_scale_relative: float = Field(PMR_SCALE_RELATIVE, gt=0.0)
    pmr_scale_velocity: float = Field(PMR_SCALE_VELOCITY, gt=0.0)
    pmr_scale_direction: float = Field(PMR_SCALE_DIRECTION, gt=0.0)
    pmr_scale_decay: float = Field(PMR_SCALE_DECAY, gt=0.0)
    gmm_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "TrackerConfig":
        cost_sum = self.omega_1 + self.omega_2 + self.omega_3 + self.omega_4
        if abs(cost_sum - 1.0) > 1e-9:
            raise ValueError(f"omega_1..omega_4 must sum to 1, got {cost_sum!r}")
        motion_sum = self.beta_1 + self.beta_2 + self.beta_3
        if abs(motion_sum - 1.0) > 1e-9:
            raise ValueError(f"beta_1..beta_3 must sum to 1, got {motion_sum!r}")
        if self.t_l >= self.t_h:
            raise ValueError(f"t_l ({self.t_l}) must be below t_h ({self.t_h})")
        if self.pmr_window > self.h_max:
            raise ValueError(f"pmr_window ({self.pmr_window}) cannot exceed h_max ({self.h_max})")
        return self

    @property
    def cost_weights(self) -> Tuple[float, float, float, float]:
        return (self.omega_1, self.omega_2, self.omega_3, self.omega_4)

    @property
    def motion_weights(self) -> Tuple[float, float, float]:
        return (self.beta_1, self.beta_2, self.beta_3)

    @property
    def frame_dims(self) -> Tuple[int, int]:
        return (self.frame_width, self.frame_height)

    @property
    def pmr_feature_scale(self) -> Tuple[float, ...]:
        """Divisors for the eight recovery feature dimensions."""
        return (
            self.pmr_scale_position, self.pmr_scale_position,
            self.pmr_scale_relative, self.pmr_scale_relative,
            self.pmr_scale_velocity, self.pmr_scale_velocity,
            self.pmr_scale_direction, self.pmr_scale_decay,
        )


class ScenarioConfig(BaseModel):
    """Synthetic scenario layout and motion mix."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_targets: int = Field(SIM_TARGETS, ge=1, le=3)
    frames: int = Field(SIM_FRAMES, ge=1)
    frame_width: int = Field(FRAME_WIDTH, ge=1)
    frame_height: int = Field(FRAME_HEIGHT, ge=1)
    motion_cv: float = Field(SIM_MOTION_MIX["cv"], ge=0.0)
    motion_hover: float = Field(SIM_MOTION_MIX["hover"], ge=0.0)
    motion_dive: float = Field(SIM_MOTION_MIX["dive"], ge=0.0)
    motion_maneuver: float = Field(SIM_MOTION_MIX["maneuver"], ge=0.0)
    size_min: float = Field(SIM_SIZE_RANGE[0], gt=0.0)
    size_max: float = Field(SIM_SIZE_RANGE[1], gt=0.0)
    speed_min: float = Field(SIM_SPEED_RANGE[0], ge=0.0)
    speed_max: float = Field(SIM_SPEED_RANGE[1], ge=0.0)
    maneuver_rate: float = Field(SIM_MANEUVER_RATE, ge=0.0, le=1.0)
    crossing: bool = False
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "ScenarioConfig":
        total = self.motion_cv + self.motion_hover + self.motion_dive + self.motion_maneuver
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"motion mix weights must sum to 1, got {total!r}")
        if self.size_min > self.size_max:
            raise ValueError("size_min cannot exceed size_max")
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min cannot exceed speed_max")
        if self.size_max + 2 * SIM_BORDER_MARGIN >= min(self.frame_width, self.frame_height):
            raise ValueError("target size does not fit inside the frame")
        return self

    @property
    def motion_mix(self) -> Dict[str, float]:
        return {
            "cv": self.motion_cv,
            "hover": self.motion_hover,
            "dive": self.motion_dive,
            "maneuver": self.motion_maneuver,
        }

    @property
    def frame_dims(self) -> Tuple[int, int]:
        return (self.frame_width, self.frame_height)


class Occlusion(BaseModel):
    """A window during which one ground-truth target is never detected."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    target: int = Field(ge=1)
    start: int = Field(ge=1)
    duration: int = Field(ge=1)

    def covers(self, target_id: int, frame: int) -> bool:
        return target_id == self.target and self.start <= frame < self.start + self.duration


class NoiseModel(BaseModel):
    """Detector imperfection model for both global and local detection."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_miss: float = Field(P_MISS_GLOBAL, ge=0.0, le=1.0)
    p_miss_local: float = Field(P_MISS_LOCAL, ge=0.0, le=1.0)
    loc_noise_std: float = Field(LOC_NOISE_STD, ge=0.0)
    size_noise_std: float = Field(SIZE_NOISE_STD, ge=0.0)
    fp_rate: float = Field(FP_RATE, ge=0.0)
    conf_base: float = Field(CONF_BASE, ge=0.0, le=1.0)
    conf_penalty: float = Field(CONF_PENALTY, ge=0.0)
    occlusions: Tuple[Occlusion, ...] = ()

    @field_validator("occlusions", mode="before")
    @classmethod
    def _parse_occlusions(cls, value: Any) -> Any:
        # Text form: "target:start:duration; target:start:duration"
        if not isinstance(value, str):
            return value
        parsed = []
        for chunk in value.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) != 3:
                raise ValueError(f"occlusion {chunk!r} must be target:start:duration")
            target, start, duration = (int(p) for p in parts)
            parsed.append({"target": target, "start": start, "duration": duration})
        return tuple(parsed)

    def is_occluded(self, target_id: int, frame: int) -> bool:
        return any(o.covers(target_id, frame) for o in self.occlusions)


_SECTIONS: Tuple[Tuple[str, Type[BaseModel]], ...] = (
    ("tracker", TrackerConfig),
    ("scenario", ScenarioConfig),
    ("noise", NoiseModel),
)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "; ".join(f"{o.target}:{o.start}:{o.duration}" for o in value)
    return str(value)


class RunConfig(BaseModel):
    """Tracker, scenario and noise settings loaded from one flat key-value file."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    noise: NoiseModel = Field(default_factory=NoiseModel)

    @classmethod
    def known_keys(cls) -> List[str]:
        keys: List[str] = []
        for _, model in _SECTIONS:
            keys.extend(k for k in model.model_fields if k not in keys)
        return keys

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "RunConfig":
        """
        Build a run config from flat keys.

        Args:
            values: Mapping of flat keys to raw (usually string) values

        Returns:
            Validated RunConfig; missing keys take their defaults

        Raises:
            ConfigError: On unknown keys or values failing validation
        """
        unknown = sorted(k for k in values if k not in cls.known_keys())
        if unknown:
            raise ConfigError(
                f"Unknown configuration key(s): {', '.join(unknown)}\n"
                f"  Known keys: {', '.join(cls.known_keys())}"
            )

        sections: Dict[str, BaseModel] = {}
        for name, model in _SECTIONS:
            subset = {k: v for k, v in values.items() if k in model.model_fields}
            try:
                sections[name] = model(**subset)
            except ValidationError as e:
                first = e.errors()[0]
                key = ".".join(str(p) for p in first["loc"]) or name
                raise ConfigError(f"Invalid configuration value for '{key}': {first['msg']}")
        return cls(**sections)

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: Dict[str, str] = {}
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{line_number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{source}:{line_number}: empty key")
            if key in values:
                raise ConfigError(f"{source}:{line_number}: duplicate key '{key}'")
            values[key] = value
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "RunConfig":
        """
        Load a run config file, falling back to SKYTRACK_CONFIG and then to defaults.

        Raises:
            DataIOError: If the file cannot be read
            ConfigError: If its contents are invalid
        """
        path = path or DEFAULT_CONFIG_PATH
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Cannot read config file {path}: {e}")
        return cls.parse_text(text, source=str(path))

    def to_text(self) -> str:
        """Serialize every key in a fixed order."""
        lines = ["# SkyTrack run configuration"]
        written = set()
        for name, _ in _SECTIONS:
            section = getattr(self, name)
            lines.append(f"# {name}")
            for key in type(section).model_fields:
                if key in written:
                    continue
                written.add(key)
                lines.append(f"{key} = {_format_value(getattr(section, key))}")
        return "\n".join(lines) + "\n"

    def with_updates(self, **updates: Any) -> "RunConfig":
        """Return a copy with flat keys replaced, revalidated."""
        values = self.flat()
        values.update(updates)
        return RunConfig.from_mapping(values)

    def flat(self) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        for name, _ in _SECTIONS:
            values.update(getattr(self, name).model_dump())
        values["occlusions"] = self.noise.occlusions
        return values

