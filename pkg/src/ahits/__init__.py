"""Adaptive hierarchical time stepping with neural flow-map steppers."""

from .adaptive import (
    AdaptiveSchedule,
    AhitsPrediction,
    Window,
    WindowPlan,
    ahits_predict,
    estimate_adaptive_steps,
    full_horizon_plan,
    plan_windows,
    shortlist_models_per_window,
)
from .errors import (
    AhitsError,
    ArtifactNotFoundError,
    ConfigError,
    DivergenceError,
    FormatError,
    InvalidArgumentError,
)
from .hierarchy import (
    HitsSelection,
    StepperHierarchy,
    hits_cross_validate,
    hits_unit_prediction,
    hits_vectorized_predict,
    load_hierarchy,
    save_hierarchy,
    train_hierarchy,
)
from .interp import linear_interpolate
from .nnts import ResNetStepper, TrainConfig, forward_step, init_stepper, rollout, train_stepper
from .numcore import StateBatch, make_rng, plain_mse, relative_mse, sample_uniform_box

__version__ = "0.1.0"
