"""Ground-truth integrators: classical RK4 and spectral ETDRK4 for KS."""

from __future__ import annotations

import numpy as np

from ..errors import DivergenceError, InvalidArgumentError
from .systems import SystemSpec, eval_rhs, ks_dealias_mask, ks_nonlinear_hat, ks_wavenumbers


def rk4_step(rhs, x, h):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite state at step {step}", where=step)


def integrate_rk4(system: SystemSpec | None, x0, dt: float, n_steps: int, substeps: int = 1, rhs=None):
    """Fixed-step RK4 rollout, one row per step (row 0 is ``x0``).

    ``x0`` may be a single state (n,) or a batch (B, n); batches give
    (B, n_steps+1, n) and each row is bit-identical to integrating it alone.
    ``substeps`` internal steps of ``dt/substeps`` are taken between stored rows.
    A custom vector field can be passed as ``rhs`` with ``system=None``.
    """
    if dt <= 0 or n_steps < 0 or substeps < 1:
        raise InvalidArgumentError("need dt > 0, n_steps >= 0, substeps >= 1")
    if rhs is None:
        if system.name == "ks":
            raise InvalidArgumentError("ks is too stiff for explicit RK4; use integrate_etdrk4")
        rhs = lambda x: eval_rhs(system, x)  # noqa: E731
    x = np.array(x0, dtype=np.float64)
    batched = x.ndim == 2
    out = np.empty((n_steps + 1, *x.shape))
    out[0] = x
    h = dt / substeps
    for i in range(1, n_steps + 1):
        for _ in range(substeps):
            x = rk4_step(rhs, x, h)
        _check_finite(x, i)
        out[i] = x
    return np.moveaxis(out, 0, 1) if batched else out


def etdrk4_coefficients(lin: np.ndarray, h: float, n_contour: int = 64):
    """Kassam-Trefethen ETDRK4 coefficients via contour-integral averaging."""
    roots = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    lr = h * lin[:, None] + roots[None, :]
    e = np.exp(h * lin)
    e2 = np.exp(h * lin / 2.0)
    q = h * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = h * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2.0 + lr + np.exp(lr) * (-2.0 + lr)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + np.exp(lr) * (4.0 - lr)) / lr**3, axis=1))
    return e, e2, q, f1, f2, f3


def integrate_etdrk4(system: SystemSpec, u0, dt: float, n_steps: int, substeps: int = 1):
    """ETDRK4 rollout of the periodic KS field; rows are real fields."""
    if system.name != "ks":
        raise InvalidArgumentError("integrate_etdrk4 only handles the ks system")
    grid = system.spatial_grid
    if grid.size & (grid.size - 1):
        raise InvalidArgumentError("ks grid size must be a power of two")
    if dt <= 0 or n_steps < 0 or substeps < 1:
        raise InvalidArgumentError("need dt > 0, n_steps >= 0, substeps >= 1")
    u = np.array(u0, dtype=np.float64)
    if u.shape[-1] != grid.size:
        raise InvalidArgumentError(f"ks expects length {grid.size}, got {u.shape[-1]}")
    k = ks_wavenumbers(grid)
    mask = ks_dealias_mask(grid)
    form = system.params.get("form", "conservative")
    h = dt / substeps
    e, e2, q, f1, f2, f3 = etdrk4_coefficients(k**2 - k**4, h)

    def nl(v_hat):
        return ks_nonlinear_hat(v_hat, k, mask, form)

    batched = u.ndim == 2
    out = np.empty((n_steps + 1, *u.shape))
    out[0] = u
    v = np.fft.rfft(u, axis=-1)
    for i in range(1, n_steps + 1):
        for _ in range(substeps):
            nv = nl(v)
            a = e2 * v + q * nv
            na = nl(a)
            b = e2 * v + q * na
            nb = nl(b)
            c = e2 * a + q * (2.0 * nb - nv)
            nc = nl(c)
            v = e * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        out[i] = np.fft.irfft(v, n=grid.size, axis=-1)
        _check_finite(out[i], i)
    return np.moveaxis(out, 0, 1) if batched else out


def integrate(system: SystemSpec, x0, dt: float, n_steps: int, substeps: int = 1):
    """Dispatch to the integrator appropriate for ``system``."""
    if system.name == "ks":
        return integrate_etdrk4(system, x0, dt, n_steps, substeps)
    return integrate_rk4(system, x0, dt, n_steps, substeps)
