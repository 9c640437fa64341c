"""Experiment configuration, benchmark presets, and the desk-scale transform."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..dynamics import get_system
from ..adaptive import POOLS, SEEDINGS
from ..errors import ConfigError
from ..hierarchy import SELECTION_METRICS
from ..nnts import ACTIVATIONS, TrainConfig

SCALES = ("desk", "paper")

# Fields that change where or how fast a run happens but never its numbers.
_NON_SEMANTIC = ("out_dir", "threads")


@dataclass
class ExperimentConfig:
    system: str
    counts: tuple[int, int, int]
    widths: list  # hidden widths shared by every level, or one hidden list per level
    epsilon: float
    box: list | None = None
    t_f: float = 51.2
    dt: float = 0.01
    m: int = 10
    activation: str = "relu"
    train: TrainConfig = field(default_factory=TrainConfig)
    noise_pcts: list[float] = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 20.0])
    seed: int = 0
    all_phases: bool = True
    selection_metric: str = "relative"
    window_seeding: str = "truth"
    window_pool: str = "ranges"
    system_params: dict = field(default_factory=dict)
    scale: str = "paper"
    out_dir: str = "runs"
    threads: int = 1

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.validate()

    def validate(self):
        try:
            spec = self.system_spec()
        except Exception as exc:
            raise ConfigError(f"system: {exc}") from exc
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ConfigError("counts must be three positive integers")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.m < 0:
            raise ConfigError("m must be non-negative")
        if abs(self.dt - 0.01) > 1e-15:
            raise ConfigError("the unit step is fixed at 0.01 s")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"unknown selection metric {self.selection_metric!r}")
        if self.window_seeding not in SEEDINGS:
            raise ConfigError(f"window_seeding must be one of {SEEDINGS}")
        if self.window_pool not in POOLS:
            raise ConfigError(f"window_pool must be one of {POOLS}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.box is not None and len(self.box) != spec.state_dim and spec.name not in ("ks", "fhn"):
            raise ConfigError(f"box has {len(self.box)} ranges, {spec.name} has {spec.state_dim} states")
        if 2**self.m > int(round(self.t_f / self.dt)):
            raise ConfigError(f"coarsest stride 2^{self.m} exceeds the trajectory length")
        if any(p < 0 for p in self.noise_pcts):
            raise ConfigError("noise percentages must be non-negative")
        per_level = self.widths and isinstance(self.widths[0], (list, tuple))
        if per_level and len(self.widths) != self.m + 1:
            raise ConfigError(f"per-level widths need {self.m + 1} entries")

    def system_spec(self):
        return get_system(self.system, **self.system_params)

    @property
    def horizon(self) -> int:
        return int(round(self.t_f / self.dt))

    def architecture(self, d: int) -> list[int]:
        """Full layer widths of level ``d``, state dimension at both ends."""
        n = self.system_spec().state_dim
        hidden = self.widths[d] if isinstance(self.widths[0], (list, tuple)) else self.widths
        return [n, *hidden, n]

    def architectures(self) -> list[list[int]]:
        return [self.architecture(d) for d in range(self.m + 1)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["counts"] = list(self.counts)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        if "system" in doc and set(doc) <= {"system", "scale", "overrides"}:
            base = preset(doc["system"], doc.get("scale", "paper"))
            return with_overrides(base, doc.get("overrides", {}))
        return cls.from_dict(doc)

    def config_hash(self, *, drop=()) -> str:
        """SHA-256 of the canonical JSON of every semantically meaningful field."""
        doc = self.to_dict()
        for key in (*_NON_SEMANTIC, *drop):
            doc.pop(key, None)
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def with_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Copy of ``cfg`` with top-level fields (and ``train`` sub-fields) replaced."""
    doc = cfg.to_dict()
    for key, value in overrides.items():
        if key == "train" and isinstance(value, dict):
            doc["train"].update(value)
        else:
            doc[key] = value
    return ExperimentConfig.from_dict(doc)


def _ks_widths():
    # finest strides get the widest bottleneck-free layer
    arch = [[2048], [1024], [512], [256], [128]]
    return [arch[min(d // 2, 4)] for d in range(11)]


# Sample counts, sampling boxes, architectures and tolerances per benchmark.
_PAPER = {
    "hyperbolic": dict(counts=(1600, 320, 320), widths=[128, 128, 128], epsilon=1e-5),
    "cubic": dict(counts=(3200, 320, 320), widths=[256, 256, 256], epsilon=5e-4),
    "vanderpol": dict(counts=(3200, 320, 320), widths=[512, 512, 512], epsilon=8e-2),
    "hopf": dict(counts=(3200, 320, 320), widths=[128, 128, 128], epsilon=5e-3),
    # one long KS trajectory; counts act as split weights
    "ks": dict(counts=(3, 1, 1), widths=_ks_widths(), epsilon=1e-5, t_f=100.0, train=TrainConfig(epochs=100)),
    "fhn": dict(counts=(3300, 320, 320), widths=[100, 512, 1024, 2048, 1024, 512, 100], epsilon=2e-2, m=6,
                train=TrainConfig(epochs=100)),
}

DESK_WIDTH_CAP = 64
DESK_PAIRS_PER_EPOCH = 16384
DESK_VAL_PAIRS = 8192
DESK_ODE_EPOCHS = 500
DESK_PDE_EPOCHS = 100


def preset(system: str, scale: str = "desk") -> ExperimentConfig:
    """Benchmark configuration at paper scale or shrunk to run on a desktop."""
    if system not in _PAPER:
        raise ConfigError(f"no preset for system {system!r}; choose from {sorted(_PAPER)}")
    if scale not in SCALES:
        raise ConfigError(f"scale must be one of {SCALES}")
    cfg = ExperimentConfig(system=system, scale="paper", **_PAPER[system])
    return desk_scale(cfg) if scale == "desk" else cfg


def desk_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shrink sample counts 4x, cap hidden widths, and bound the pairs per epoch.

    KS counts are split weights of one trajectory and stay as they are.
    """
    pde = cfg.system in ("ks", "fhn")
    counts = cfg.counts if cfg.system == "ks" else tuple(max(1, c // 4) for c in cfg.counts)

    def cap(ws):
        return [min(w, DESK_WIDTH_CAP) for w in ws]

    widths = [cap(w) for w in cfg.widths] if isinstance(cfg.widths[0], (list, tuple)) else cap(cfg.widths)
    if cfg.system == "fhn":
        widths = [DESK_WIDTH_CAP] * 3
    train = replace(cfg.train, epochs=DESK_PDE_EPOCHS if pde else DESK_ODE_EPOCHS,
                    max_pairs_per_epoch=DESK_PAIRS_PER_EPOCH, max_val_pairs=DESK_VAL_PAIRS)
    return replace(cfg, counts=counts, widths=widths, train=train, scale="desk")
