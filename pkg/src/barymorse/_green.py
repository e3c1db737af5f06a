"""Closed-form and accelerated Green's functions for the model surfaces.

Flat unit torus [0,1)^2
    G(r) = sum_{k != 0} exp(2 pi i k.r) / (4 pi^2 |k|^2),  r = x - a.
    Two independent evaluation routes are provided: an Ewald split
    (Gaussian-damped reciprocal sum plus exponential-integral image sum)
    and a row-summed Fourier series where the inner lattice sum is done
    in closed form.

Round sphere of unit area (radius R = 1/(2 sqrt(pi)))
    G(p, q) = -(1/2pi) ln|p - q| - (1 + ln pi) / (4 pi),
    which is the closed-form value of the zonal Legendre series
    sum_l (2l+1) P_l(cos t) / (4 pi l (l+1)).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft
from scipy.special import exp1

EULER_GAMMA = 0.57721566490153286061

# Ewald splitting time for pointwise evaluation; t0 = 1/(4 pi) balances the
# reciprocal damping exp(-pi k^2) against the image decay E1(pi |r+n|^2).
_T0 = 1.0 / (4.0 * math.pi)
_KMAX = 5
_NMAX = 4


def _lattice(nmax: int, skip_origin: bool) -> np.ndarray:
    r = np.arange(-nmax, nmax + 1)
    pts = np.array([(i, j) for i in r for j in r], dtype=float)
    if skip_origin:
        pts = pts[np.any(pts != 0, axis=1)]
    return pts


_KVEC = _lattice(_KMAX, skip_origin=True)
_KVEC = _KVEC[(_KVEC[:, 0] > 0) | ((_KVEC[:, 0] == 0) & (_KVEC[:, 1] > 0))]
_K2 = np.sum(_KVEC**2, axis=1)
# Half lattice, so each coefficient is doubled.
_KCOEF = 2.0 * np.exp(-4.0 * math.pi**2 * _K2 * _T0) / (4.0 * math.pi**2 * _K2)
_NVEC = _lattice(_NMAX, skip_origin=False)


def ein(z: np.ndarray) -> np.ndarray:
    """Entire exponential integral Ein(z) = int_0^z (1 - e^-t)/t dt for z >= 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z <= 2.0
    zs = z[small]
    term = zs.copy()
    acc = zs.copy()
    for k in range(2, 40):
        term = -term * zs / k
        acc += term / k
    out[small] = acc
    zl = z[~small]
    out[~small] = exp1(zl) + EULER_GAMMA + np.log(zl)
    return out


def wrap(r: np.ndarray) -> np.ndarray:
    """Minimal-image representative of a torus displacement, in [-1/2, 1/2)."""
    return r - np.floor(r + 0.5)


def torus_green_ewald(r: np.ndarray, derivs: int = 0):
    """Torus Green's function at displacement(s) r of shape (..., 2).

    Returns G, and with ``derivs >= 1`` also its gradient, with
    ``derivs >= 2`` also its Hessian, all with respect to r.
    """
    r = wrap(np.asarray(r, dtype=float))
    shape = r.shape[:-1]
    rf = r.reshape(-1, 2)
    phase = 2.0 * math.pi * rf @ _KVEC.T
    cosp = np.cos(phase)
    g = cosp @ _KCOEF - _T0
    R = rf[:, None, :] + _NVEC[None, :, :]
    R2 = np.sum(R**2, axis=-1)
    z = R2 / (4.0 * _T0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = g + np.sum(exp1(z), axis=1) / (4.0 * math.pi)
    if derivs == 0:
        return g.reshape(shape)
    sinp = np.sin(phase)
    grad = -(sinp * _KCOEF) @ (2.0 * math.pi * _KVEC)
    ez = np.exp(-z)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = ez / R2
    grad = grad - np.einsum("pn,pnd->pd", w, R) / (2.0 * math.pi)
    if derivs == 1:
        return g.reshape(shape), grad.reshape(shape + (2,))
    hess = -np.einsum("pk,ki,kj->pij", cosp * _KCOEF, 2 * math.pi * _KVEC, 2 * math.pi * _KVEC)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = -ez * (1.0 / (4.0 * _T0 * R2) + 1.0 / R2**2) * 2.0
    eye = np.eye(2)
    hess = hess - (
        np.einsum("pn,pni,pnj->pij", a, R, R) + np.einsum("pn,ij->pij", w, eye)
    ) / (2.0 * math.pi)
    return g.reshape(shape), grad.reshape(shape + (2,)), hess.reshape(shape + (2, 2))


def torus_green_regular(r: np.ndarray) -> np.ndarray:
    """G(r) + (1/2pi) ln|r| for the minimal image r; smooth through r = 0."""
    r = wrap(np.asarray(r, dtype=float))
    shape = r.shape[:-1]
    rf = r.reshape(-1, 2)
    g = np.cos(2.0 * math.pi * rf @ _KVEC.T) @ _KCOEF - _T0
    nz = _NVEC[np.any(_NVEC != 0, axis=1)]
    R2 = np.sum((rf[:, None, :] + nz[None]) ** 2, axis=-1)
    g = g + np.sum(exp1(R2 / (4.0 * _T0)), axis=1) / (4.0 * math.pi)
    z0 = np.sum(rf**2, axis=1) / (4.0 * _T0)
    g = g + (ein(z0) - EULER_GAMMA + math.log(4.0 * _T0)) / (4.0 * math.pi)
    return g.reshape(shape)


def torus_robin_constant() -> float:
    """Exact limit of G(r) + (1/2pi) ln|r| as r -> 0 on the unit square torus."""
    return float(torus_green_regular(np.zeros(2)))


def _series_single(x: float, y: float, tol: float, kmax: int) -> tuple[float, int]:
    # Sum over the second index in closed form; the first index then
    # converges like exp(-2 pi k min(y, 1-y)).
    base = 2.0 * math.pi**2 * (y * y - y + 1.0 / 6.0)
    total = 0.0
    k = 0
    for k in range(1, kmax + 1):
        q = math.exp(-2.0 * math.pi * k)
        term = (math.exp(-2.0 * math.pi * k * y) + math.exp(-2.0 * math.pi * k * (1.0 - y))) / (1.0 - q)
        term *= 2.0 * math.pi / k * math.cos(2.0 * math.pi * k * x) / 2.0
        total += 2.0 * term
        if abs(term) < tol * 1e-3 and k > 3:
            break
    return (base + total) / (4.0 * math.pi**2), k


def torus_green_series(r: np.ndarray, tol: float = 1e-15, kmax: int = 200000):
    """Fourier series of the torus Green's function, summed row by row.

    The lattice sum over one index is evaluated exactly; the remaining sum
    converges geometrically unless both coordinates are close to integers.
    Returns (values, terms_used).
    """
    r = np.asarray(r, dtype=float)
    rf = np.mod(r.reshape(-1, 2), 1.0)
    vals = np.empty(len(rf))
    used = np.empty(len(rf), dtype=int)
    for i, (x, y) in enumerate(rf):
        # Sum analytically along the coordinate farther from the lattice.
        if min(x, 1 - x) > min(y, 1 - y):
            x, y = y, x
        vals[i], used[i] = _series_single(x, y, tol, kmax)
    return vals.reshape(r.shape[:-1]), used.reshape(r.shape[:-1])


def torus_green_grid(N: int, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """G(a, .) on the N x N grid via FFT Ewald.

    Returns (G, H_near) where H_near = G + (1/2pi) ln|x - a| on grid points
    within the real-space cutoff and NaN elsewhere (so the diagonal is finite).
    """
    a = np.asarray(a, dtype=float)
    t0 = 42.0 / (math.pi**2 * N**2)
    k1 = sfft.fftfreq(N, 1.0 / N)
    k2 = sfft.rfftfreq(N, 1.0 / N)
    K1, K2 = np.meshgrid(k1, k2, indexing="ij")
    k2sq = K1**2 + K2**2
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.exp(-4.0 * math.pi**2 * k2sq * t0) / (4.0 * math.pi**2 * k2sq)
    coef[0, 0] = 0.0
    coef = coef * np.exp(-2j * math.pi * (K1 * a[0] + K2 * a[1]))
    smooth = sfft.irfft2(coef * N * N, s=(N, N)) - t0
    x = np.arange(N) / N
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    d = wrap(np.stack([X1 - a[0], X2 - a[1]], axis=-1))
    r2 = np.sum(d**2, axis=-1)
    z = r2 / (4.0 * t0)
    near = z < 40.0
    G = smooth.copy()
    H = np.full_like(smooth, np.nan)
    with np.errstate(divide="ignore"):
        G[near] += exp1(z[near]) / (4.0 * math.pi)
    H[near] = smooth[near] + (ein(z[near]) - EULER_GAMMA + math.log(4.0 * t0)) / (4.0 * math.pi)
    return G, H


SPHERE_RADIUS = 1.0 / (2.0 * math.sqrt(math.pi))
SPHERE_GREEN_CONST = -(1.0 + math.log(math.pi)) / (4.0 * math.pi)


def sphere_green(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(np.asarray(q) - np.asarray(p), axis=-1)
    with np.errstate(divide="ignore"):
        return -np.log(d) / (2.0 * math.pi) + SPHERE_GREEN_CONST


def sphere_green_series(cos_angle: np.ndarray, lmax: int) -> np.ndarray:
    """Truncated zonal Legendre series of the sphere Green's function."""
    t = np.asarray(cos_angle, dtype=float)
    p0, p1 = np.ones_like(t), t.copy()
    acc = np.zeros_like(t)
    for l in range(1, lmax + 1):
        acc += (2 * l + 1) * p1 / (4.0 * math.pi * l * (l + 1))
        p0, p1 = p1, ((2 * l + 1) * t * p1 - l * p0) / (l + 1)
    return acc
