"""The mean field functional J(u) = 1/2 |grad u|^2 - rho ln int K e^u and its first variation."""

from __future__ import annotations

import math

import numpy as np

from .surface import Surface


def weight_on_grid(surface: Surface, K) -> np.ndarray:
    """K sampled on the grid, cached on the surface per weight configuration."""
    cache = surface.__dict__.setdefault("_weight_cache", {})
    key = repr(K.to_config())
    vals = cache.get(key)
    if vals is None:
        vals = K.value(surface.grid_points())
        cache[key] = vals
    return vals


def _check_mean_zero(surface: Surface, u) -> None:
    scale = max(1.0, float(np.max(np.abs(u))))
    if abs(surface.mean(u)) > 1e-9 * scale:
        raise ValueError("field must have zero mean")


def log_partition(surface: Surface, Kg: np.ndarray, u) -> tuple[float, np.ndarray]:
    """(ln int K e^u, K e^u / int K e^u), overflow-safe."""
    shift = float(np.max(u))
    e = Kg * np.exp(u - shift)
    Z = surface.integrate(e)
    if not Z > 0:
        raise ValueError("int K e^u must be positive")
    return math.log(Z) + shift, e / Z


def energy(surface: Surface, K, rho: float, u) -> float:
    u = np.asarray(u, dtype=float)
    _check_mean_zero(surface, u)
    lnZ, _ = log_partition(surface, weight_on_grid(surface, K), u)
    return 0.5 * surface.dirichlet_inner(u, u) - rho * lnZ


def energy_grad(surface: Surface, K, rho: float, u) -> np.ndarray:
    """Riesz representative r of dJ in the Dirichlet pairing: r = u - rho (-Delta)^{-1}(q - 1)."""
    u = np.asarray(u, dtype=float)
    _check_mean_zero(surface, u)
    _, q = log_partition(surface, weight_on_grid(surface, K), u)
    return u - rho * surface.solve_poisson(q - surface.integrate(q))


def gradient_pairing(surface: Surface, K, rho: float, u, h) -> float:
    """<grad J(u), h> = <u, h> - rho int K e^u h / int K e^u, by quadrature."""
    _, q = log_partition(surface, weight_on_grid(surface, K), np.asarray(u, dtype=float))
    return surface.dirichlet_inner(u, h) - rho * surface.integrate(q * h)
