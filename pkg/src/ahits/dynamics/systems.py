"""The six benchmark systems and their right-hand sides.

ODE forms (overridable through ``params``)::

    hyperbolic  x' = mu*x,                     y' = lam*(y - x**2)
    cubic       x' = -0.1x^3 + 2y^3,            y' = -2x^3 - 0.1y^3
    vanderpol   x' = y,                         y' = mu*(1 - x**2)*y - x
    hopf        mu' = 0,  x' = mu*x + y - x*(x^2+y^2),  y' = -x + mu*y - y*(x^2+y^2)

``fhn`` stacks the activator and inhibitor on a uniform grid (state = [u; v])
with zero-flux ends. ``ks`` is the Kuramoto-Sivashinsky field on a periodic
grid, linear part handled spectrally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class SpatialGrid:
    size: int
    length: float
    boundary: str  # "neumann" or "periodic"

    @property
    def spacing(self) -> float:
        if self.boundary == "periodic":
            return self.length / self.size
        return self.length / (self.size - 1)

    def nodes(self) -> np.ndarray:
        if self.boundary == "periodic":
            return self.spacing * np.arange(self.size)
        return np.linspace(0.0, self.length, self.size)


@dataclass(frozen=True)
class SystemSpec:
    name: str
    state_dim: int
    params: dict = field(default_factory=dict)
    spatial_grid: SpatialGrid | None = None
    default_box: tuple | None = None

    @property
    def is_pde(self) -> bool:
        return self.spatial_grid is not None

    def with_params(self, **overrides) -> "SystemSpec":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise InvalidArgumentError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        return SystemSpec(self.name, self.state_dim, {**self.params, **overrides},
                          self.spatial_grid, self.default_box)


def _hyperbolic(x, p):
    return np.stack([p["mu"] * x[..., 0], p["lam"] * (x[..., 1] - x[..., 0] ** 2)], axis=-1)


def _cubic(x, p):
    x3, y3 = x[..., 0] ** 3, x[..., 1] ** 3
    return np.stack([p["a"] * x3 + p["b"] * y3, -p["b"] * x3 + p["a"] * y3], axis=-1)


def _vanderpol(x, p):
    x0, y0 = x[..., 0], x[..., 1]
    return np.stack([y0, p["mu"] * (1.0 - x0**2) * y0 - x0], axis=-1)


def _hopf(x, p):
    mu, a, b = x[..., 0], x[..., 1], x[..., 2]
    r2 = a**2 + b**2
    return np.stack([np.zeros_like(mu), mu * a + b - a * r2, -a + mu * b - b * r2], axis=-1)


def _neumann_laplacian(u, h):
    lap = np.empty_like(u)
    lap[..., 1:-1] = u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]
    lap[..., 0] = 2.0 * (u[..., 1] - u[..., 0])
    lap[..., -1] = 2.0 * (u[..., -2] - u[..., -1])
    return lap / (h * h)


def _fhn(x, p, grid):
    m = grid.size
    u, v = x[..., :m], x[..., m:]
    beta = p["beta"]
    react = u * (u - 0.1) * (1.0 - u)
    du = beta * _neumann_laplacian(u, grid.spacing) + (react - v + p["c"]) / beta
    dv = p["gamma"] * u - p["delta"] * v + p["c"]
    return np.concatenate([du, dv], axis=-1)


def ks_wavenumbers(grid: SpatialGrid) -> np.ndarray:
    """Physical wavenumbers of the rfft modes on the periodic grid."""
    return 2.0 * np.pi * np.fft.rfftfreq(grid.size, d=grid.spacing)


def ks_dealias_mask(grid: SpatialGrid) -> np.ndarray:
    modes = np.arange(grid.size // 2 + 1)
    return modes < grid.size / 3.0


def ks_nonlinear_hat(u_hat, k, mask, form="conservative"):
    """Spectral nonlinear tendency: -(u^2)_x / 2, or -(u_x)^2 / 2 for ``form='gradient'``."""
    n = 2 * (u_hat.shape[-1] - 1)
    if form == "conservative":
        u = np.fft.irfft(u_hat, n=n, axis=-1)
        out = -0.5j * k * np.fft.rfft(u * u, axis=-1)
    else:
        ux = np.fft.irfft(1j * k * u_hat, n=n, axis=-1)
        out = -0.5 * np.fft.rfft(ux * ux, axis=-1)
    return out * mask


def _ks(x, p, grid):
    k = ks_wavenumbers(grid)
    u_hat = np.fft.rfft(x, axis=-1)
    lin = (k**2 - k**4) * u_hat
    nl = ks_nonlinear_hat(u_hat, k, ks_dealias_mask(grid), p.get("form", "conservative"))
    return np.fft.irfft(lin + nl, n=grid.size, axis=-1)


SYSTEMS: dict[str, SystemSpec] = {
    "hyperbolic": SystemSpec("hyperbolic", 2, {"mu": -0.05, "lam": -1.0},
                             default_box=((-1.0, 1.0), (-1.0, 1.0))),
    "cubic": SystemSpec("cubic", 2, {"a": -0.1, "b": 2.0},
                        default_box=((-1.0, 1.0), (-1.0, 1.0))),
    "vanderpol": SystemSpec("vanderpol", 2, {"mu": 2.0},
                            default_box=((-2.0, 2.0), (-4.0, 4.0))),
    "hopf": SystemSpec("hopf", 3, {},
                       default_box=((-0.2, 0.6), (-1.0, 2.0), (-1.0, 1.0))),
    "fhn": SystemSpec("fhn", 100, {"beta": 0.015, "c": 0.05, "gamma": 0.5, "delta": 2.0},
                      spatial_grid=SpatialGrid(50, 1.0, "neumann"),
                      # ranges for (bump amplitude, bump centre, inhibitor offset)
                      default_box=((0.2, 1.0), (0.0, 1.0), (0.0, 0.1))),
    "ks": SystemSpec("ks", 512, {"form": "conservative"},
                     spatial_grid=SpatialGrid(512, 32.0 * np.pi, "periodic")),
}

_RHS: dict[str, Callable] = {
    "hyperbolic": _hyperbolic,
    "cubic": _cubic,
    "vanderpol": _vanderpol,
    "hopf": _hopf,
}


def get_system(name: str, **overrides) -> SystemSpec:
    try:
        spec = SYSTEMS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return spec.with_params(**overrides) if overrides else spec


def eval_rhs(system: SystemSpec, state, t: float = 0.0) -> np.ndarray:
    """Vector field ``f(x)`` of ``system``; accepts one state or a batch along axis 0.

    All six systems are autonomous, so ``t`` is ignored.
    """
    if system.name not in SYSTEMS:
        raise InvalidArgumentError(f"unknown system {system.name!r}")
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] != system.state_dim:
        raise InvalidArgumentError(
            f"{system.name} expects state length {system.state_dim}, got {x.shape[-1]}")
    if system.name == "fhn":
        return _fhn(x, system.params, system.spatial_grid)
    if system.name == "ks":
        return _ks(x, system.params, system.spatial_grid)
    return _RHS[system.name](x, system.params)


def fhn_boundary_outputs(states: np.ndarray, system: SystemSpec) -> np.ndarray:
    """Activator and inhibitor at the right end (x = 1), shape (..., 2)."""
    m = system.spatial_grid.size
    return np.stack([states[..., m - 1], states[..., -1]], axis=-1)


def kassam_trefethen_profile(grid: SpatialGrid) -> np.ndarray:
    x = grid.nodes()
    return np.cos(x / 16.0) * (1.0 + np.sin(x / 16.0))


def sample_initial_states(system: SystemSpec, rng: np.random.Generator, count: int, box=None) -> np.ndarray:
    """Initial conditions, shape (count, n).

    ODEs: uniform in ``box``. ``fhn``: a Gaussian activator bump of random
    amplitude and centre over a uniform inhibitor level, the three ranges
    given by ``box``. ``ks``: the classic cos(x/16)(1+sin(x/16)) profile.
    """
    from ..numcore import sample_uniform_box

    box = system.default_box if box is None else box
    if system.name == "ks":
        return np.tile(kassam_trefethen_profile(system.spatial_grid), (count, 1))
    if system.name == "fhn":
        params = sample_uniform_box(rng, box, count).data[:, 0, :]
        x = system.spatial_grid.nodes()
        amp, centre, inhib = params[:, :1], params[:, 1:2], params[:, 2:3]
        u = amp * np.exp(-((x[None, :] - centre) / 0.1) ** 2)
        v = np.broadcast_to(inhib, u.shape)
        return np.concatenate([u, v], axis=-1)
    if len(box) != system.state_dim:
        raise InvalidArgumentError(
            f"box has {len(box)} dimensions but {system.name} has state dimension {system.state_dim}")
    return sample_uniform_box(rng, box, count).data[:, 0, :]
