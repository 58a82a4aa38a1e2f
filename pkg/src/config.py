"""Runtime configuration: environment overrides, algorithm defaults and the JSON run config."""

import json
import os
from dataclasses import asdict, dataclass, field, fields

from dotenv import load_dotenv

from src.errors import ConfigError, InputMissing

# Load environment variables (e.g. QUASIWARP_THREADS)
load_dotenv()


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


def _env_float(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")


# ── Environment ──────────────────────────────────────────────────────
THREADS = max(1, _env_int("QUASIWARP_THREADS", os.cpu_count() or 1))
TOLERANCE = _env_float("QUASIWARP_TOL", 1e-10)
CANVAS_CAP_PX = _env_int("QUASIWARP_CANVAS_CAP", 20000)

# ── Algorithm defaults ───────────────────────────────────────────────
RANSAC_THRESHOLD_PX = 3.0
RANSAC_MAX_ITERATIONS = 2000
RANSAC_CONFIDENCE = 0.995
RANSAC_SEED = 0
RANSAC_MIN_INLIERS = 8
RANSAC_BATCH = 64

EDGE_SAMPLES = 64
RECTIFY_MAX_ITERATIONS = 50
RECTIFY_TOLERANCE = 1e-10
ROUND_TRIP_TOLERANCE_PX = 1e-3

HARRIS_SIGMA = 1.0
HARRIS_MIN_DISTANCE = 5
PATCH_RADIUS = 4
MATCH_RATIO = 0.8
MATCH_MIN_NCC = 0.9

FEATHER_PX = 0
NUMBER_FORMAT = "%.12g"


@dataclass
class RunConfig:
    """Parameters shared by the commands; every field has an explicit default."""

    mode: str = "quasi"
    rectify: bool = False
    refine_partition: bool = False
    fallback_to_homography: bool = True
    feather_px: int = FEATHER_PX
    ransac_threshold: float = RANSAC_THRESHOLD_PX
    ransac_iterations: int = RANSAC_MAX_ITERATIONS
    ransac_confidence: float = RANSAC_CONFIDENCE
    ransac_min_inliers: int = RANSAC_MIN_INLIERS
    seed: int = RANSAC_SEED
    ref_index: int | None = None
    x_star: float | None = None
    x_range: list = field(default_factory=lambda: [-200.0, 800.0])
    y_range: list = field(default_factory=lambda: [-300.0, 300.0])
    steps: list = field(default_factory=lambda: [10, 10])
    scale_samples: int = 101
    homography: list | None = None
    canvas_cap: int = CANVAS_CAP_PX

    def __post_init__(self):
        if self.mode not in ("quasi", "homography"):
            raise ConfigError(f"mode must be 'quasi' or 'homography', got {self.mode!r}")
        if self.feather_px < 0:
            raise ConfigError("feather_px must be >= 0")
        if self.ransac_threshold <= 0:
            raise ConfigError("ransac_threshold must be > 0")
        if self.ransac_iterations < 1:
            raise ConfigError("ransac_iterations must be >= 1")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ConfigError("ransac_confidence must lie in (0, 1)")
        if self.homography is not None and len(self.homography) != 9:
            raise ConfigError("homography must hold nine numbers")
        if len(self.steps) != 2 or min(self.steps) < 2:
            raise ConfigError("steps must be two integers >= 2")

    @classmethod
    def from_json(cls, path):
        """Load a config file, rejecting unknown keys."""
        if not os.path.exists(path):
            raise InputMissing(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def merged(self, overrides):
        """Return a copy with every non-None override applied."""
        data = asdict(self)
        for key, value in overrides.items():
            if value is not None and key in data:
                data[key] = value
        return type(self)(**data)

    def to_dict(self):
        return asdict(self)
