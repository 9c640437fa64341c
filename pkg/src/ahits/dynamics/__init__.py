from .datasets import (
    SPLITS,
    UNIT_DT,
    TrajectoryDataset,
    add_noise,
    generate_dataset,
    read_dataset,
    subsample_dyadic,
    write_dataset,
)
from .integrators import integrate, integrate_etdrk4, integrate_rk4
from .systems import SYSTEMS, SystemSpec, eval_rhs, get_system, sample_initial_states

__all__ = [
    "SPLITS", "SYSTEMS", "UNIT_DT", "SystemSpec", "TrajectoryDataset", "add_noise", "eval_rhs",
    "generate_dataset", "get_system", "integrate", "integrate_etdrk4", "integrate_rk4",
    "read_dataset", "sample_initial_states", "subsample_dyadic", "write_dataset",
]
