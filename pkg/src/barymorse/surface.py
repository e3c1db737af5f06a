"""Discretised closed surfaces of unit area.

Two model surfaces are supported:

``torus``
    The flat square torus [0,1)^2 on an N x N periodic grid with an FFT
    spectral basis. Points are 2-vectors of chart coordinates.
``sphere``
    The round sphere of area 1 (radius 1/(2 sqrt(pi)), Gauss curvature
    4 pi) on an N x 2N Gauss-Legendre x uniform grid with a real
    spherical-harmonic basis of degree < N. Points are embedded 3-vectors.

Every surface carries the same spectral interface: grid quadrature,
mean-zero Poisson solves, the Dirichlet pairing, and a real coefficient
vector in an L^2-orthonormal eigenbasis. Isothermal charts around a point
``a`` are the identity (torus) and a rescaled stereographic projection
from the antipode (sphere), normalised so that the metric at ``a`` is the
Euclidean one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import _green
from ._sht import SphericalTransform

SPHERE_RADIUS = _green.SPHERE_RADIUS


def cutoff(t, eta: float, deriv: int = 0):
    """Radial cut-off: t on [0, eta], 2 eta beyond 2 eta, quintic blend between.

    The blend matches value, slope and curvature at both ends (C^2) and is
    monotone; its slope is (1 - s)^2 (15 s^2 + 2 s + 1), s = t/eta - 1.
    ``deriv`` selects the derivative order (0, 1 or 2).
    """
    t = np.asarray(t, dtype=float)
    s = np.clip(t / eta - 1.0, 0.0, 1.0)
    inner = t <= eta
    outer = t >= 2.0 * eta
    if deriv == 0:
        blend = eta * (1.0 + s + 4 * s**3 - 7 * s**4 + 3 * s**5)
        return np.where(inner, t, np.where(outer, 2.0 * eta, blend))
    if deriv == 1:
        blend = 1.0 + 12 * s**2 - 28 * s**3 + 15 * s**4
        return np.where(inner, 1.0, np.where(outer, 0.0, blend))
    if deriv == 2:
        blend = (24 * s - 84 * s**2 + 60 * s**3) / eta
        return np.where(inner | outer, 0.0, blend)
    raise ValueError("deriv must be 0, 1 or 2")


class Surface:
    """Common interface; see :func:`build_surface`."""

    kind: str
    N: int
    eta: float
    eta0: float
    dim_ambient: int
    curvature: float

    # -- quadrature ---------------------------------------------------------
    @property
    def weights(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    @property
    def h(self) -> float:
        """Characteristic grid spacing."""
        raise NotImplementedError

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def mean(self, values) -> float:
        return self.integrate(values)

    def l2_inner(self, u, v) -> float:
        return float(np.sum(self.weights * u * v))

    # -- spectral interface -------------------------------------------------
    def to_coeffs(self, values) -> np.ndarray:
        raise NotImplementedError

    def to_values(self, coeffs) -> np.ndarray:
        raise NotImplementedError

    @property
    def eigenvalues(self) -> np.ndarray:
        """Laplace eigenvalue of each real coefficient (constant mode first)."""
        raise NotImplementedError

    def solve_poisson(self, f, tol: float = 1e-9) -> np.ndarray:
        """Mean-zero u with -Delta u = f; f must have zero mean."""
        f = np.asarray(f, dtype=float)
        scale = max(1.0, float(np.max(np.abs(f))))
        m = self.mean(f)
        if abs(m) > tol * scale:
            raise ValueError(f"Poisson right-hand side has mean {m:.3e}; only mean-zero data is solvable")
        return self._poisson(f)

    def neg_laplacian(self, u) -> np.ndarray:
        return self._neglap(np.asarray(u, dtype=float))

    def dirichlet_inner(self, u, v) -> float:
        """int grad u . grad v dV, evaluated spectrally."""
        raise NotImplementedError

    def dirichlet_norm(self, u) -> float:
        return math.sqrt(max(self.dirichlet_inner(u, u), 0.0))

    # -- geometry -----------------------------------------------------------
    def grid_points(self) -> np.ndarray:
        raise NotImplementedError

    def normalize_point(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float)

    def chart(self, a, x) -> np.ndarray:
        """Isothermal chart coordinates y_a(x) (shape (..., 2))."""
        raise NotImplementedError

    def chart_inverse(self, a, y) -> np.ndarray:
        raise NotImplementedError

    def chart_radius(self, a, x) -> np.ndarray:
        return np.linalg.norm(self.chart(a, x), axis=-1)

    def psi(self, a, x) -> np.ndarray:
        return cutoff(self.chart_radius(a, x), self.eta)

    def distance(self, a, b) -> np.ndarray:
        raise NotImplementedError

    def conformal_factor(self, a, x) -> np.ndarray:
        raise NotImplementedError

    def gauss_curvature(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.curvature)

    def retract(self, a, v) -> np.ndarray:
        """Move point a along tangent coordinates v (chart-compatible)."""
        raise NotImplementedError

    def tangent_basis(self, a) -> np.ndarray:
        raise NotImplementedError

    # -- Green's function ---------------------------------------------------
    def green(self, a, x, method: str | None = None) -> np.ndarray:
        raise NotImplementedError

    def green_field(self, a) -> np.ndarray:
        raise NotImplementedError

    def regular_field(self, a) -> np.ndarray:
        """H(a, .) on the grid, finite everywhere."""
        raise NotImplementedError

    def eigenmodes(self, n: int):
        """First n non-constant real eigenmodes as (mu, evaluator) pairs."""
        raise NotImplementedError

    def random_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "N": self.N,
            "eta": self.eta,
            "eta0": self.eta0,
            "grid_shape": list(self.shape),
            "area": self.integrate(np.ones(self.shape)),
            "gauss_curvature": self.curvature,
            "first_eigenvalue": float(np.min(self.eigenvalues[1:])),
            "spectral_modes": int(np.count_nonzero(self._kept_count())),
        }

    def _kept_count(self):
        return self.eigenvalues[self.eigenvalues <= self.mu_max * (1 + 1e-12)]


@dataclass
class ScalarField:
    """Grid values on a surface, with lazily computed coefficients and mean."""

    surface: Surface
    values: np.ndarray

    @cached_property
    def coeffs(self) -> np.ndarray:
        return self.surface.to_coeffs(self.values)

    @cached_property
    def mean(self) -> float:
        return self.surface.mean(self.values)

    def __add__(self, other):
        ov = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.surface, self.values + ov)

    def __mul__(self, c):
        return ScalarField(self.surface, self.values * c)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# Torus
# ---------------------------------------------------------------------------


class Torus(Surface):
    kind = "torus"
    dim_ambient = 2
    curvature = 0.0

    def __init__(self, N: int, eta: float):
        self.N = N
        self.eta = eta
        self.eta0 = 0.25
        k1 = sfft.fftfreq(N, 1.0 / N)
        k2 = sfft.rfftfreq(N, 1.0 / N)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        self._K1, self._K2 = K1, K2
        self.mu_grid = 4.0 * math.pi**2 * (K1**2 + K2**2)
        self.mu_max = (math.pi * N) ** 2
        kept = self.mu_grid <= self.mu_max * (1 + 1e-12)
        self._mu_kept = np.where(kept, self.mu_grid, 0.0)
        with np.errstate(divide="ignore"):
            self._inv_mu = np.where(kept & (self.mu_grid > 0), 1.0 / self.mu_grid, 0.0)
        w = np.full(K2.shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        self._colw = w * kept
        self._build_packing()

    @property
    def weights(self):
        return np.full((self.N, self.N), 1.0 / self.N**2)

    @property
    def shape(self):
        return (self.N, self.N)

    @property
    def h(self):
        return 1.0 / self.N

    def integrate(self, values):
        return float(np.mean(values))

    def l2_inner(self, u, v):
        return float(np.mean(u * v))

    def spectral(self, values):
        return sfft.rfft2(values) / self.N**2

    def physical(self, spec):
        return sfft.irfft2(spec * self.N**2, s=(self.N, self.N))

    def _poisson(self, f):
        return self.physical(self.spectral(f) * self._inv_mu)

    def _neglap(self, u):
        return self.physical(self.spectral(u) * self._mu_kept)

    def dirichlet_inner(self, u, v):
        uh = self.spectral(u)
        vh = uh if v is u else self.spectral(v)
        return float(np.sum(self._colw * self.mu_grid * (uh.real * vh.real + uh.imag * vh.imag)))

    def _build_packing(self):
        N, h = self.N, self.N // 2
        rows, cols, part, scale = [], [], [], []
        selfconj = [(0, 0), (h, 0), (0, h), (h, h)]
        for r, c in selfconj:
            rows.append(r), cols.append(c), part.append(0), scale.append(1.0)
        s2 = math.sqrt(2.0)
        for c in (0, h):
            for r in range(1, h):
                rows += [r, r]
                cols += [c, c]
                part += [0, 1]
                scale += [s2, -s2]
        rr, cc = np.meshgrid(np.arange(N), np.arange(1, h), indexing="ij")
        rr, cc = rr.ravel(), cc.ravel()
        rows += list(np.repeat(rr, 2))
        cols += list(np.repeat(cc, 2))
        part += [0, 1] * len(rr)
        scale += [s2, -s2] * len(rr)
        self._p_rows = np.array(rows)
        self._p_cols = np.array(cols)
        self._p_part = np.array(part)
        self._p_scale = np.array(scale)
        mu = self.mu_grid[self._p_rows, self._p_cols]
        order = np.argsort(mu, kind="stable")
        for name in ("_p_rows", "_p_cols", "_p_part", "_p_scale"):
            setattr(self, name, getattr(self, name)[order])
        self._eigs = mu[order]
        # Partner rows for the Hermitian columns.
        self._herm_rows = np.arange(1, h)

    @property
    def eigenvalues(self):
        return self._eigs

    def to_coeffs(self, values):
        c = self.spectral(values)
        vals = np.where(self._p_part == 0, c.real[self._p_rows, self._p_cols], c.imag[self._p_rows, self._p_cols])
        return vals * self._p_scale

    def to_values(self, coeffs):
        N, h = self.N, self.N // 2
        spec = np.zeros((N, h + 1), dtype=complex)
        re = self._p_part == 0
        spec.real[self._p_rows[re], self._p_cols[re]] = coeffs[re] / self._p_scale[re]
        im = ~re
        spec.imag[self._p_rows[im], self._p_cols[im]] = coeffs[im] / self._p_scale[im]
        r = self._herm_rows
        for c in (0, h):
            spec[N - r, c] = np.conj(spec[r, c])
        return self.physical(spec)

    def grid_points(self):
        x = np.arange(self.N) / self.N
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    def normalize_point(self, p):
        return np.mod(np.asarray(p, dtype=float), 1.0)

    def chart(self, a, x):
        return _green.wrap(np.asarray(x, dtype=float) - np.asarray(a, dtype=float))

    def chart_inverse(self, a, y):
        return np.mod(np.asarray(a, dtype=float) + y, 1.0)

    def distance(self, a, b):
        return np.linalg.norm(self.chart(a, b), axis=-1)

    def conformal_factor(self, a, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def retract(self, a, v):
        return np.mod(np.asarray(a, dtype=float) + v, 1.0)

    def tangent_basis(self, a):
        return np.eye(2)

    def green(self, a, x, method=None):
        r = np.asarray(x, dtype=float) - np.asarray(a, dtype=float)
        if method in (None, "ewald"):
            return _green.torus_green_ewald(r)
        if method == "series":
            return _green.torus_green_series(r)[0]
        raise ValueError(f"unknown Green's function method {method!r}")

    def green_derivs(self, r):
        """G, gradient and Hessian with respect to the displacement r = x - a."""
        return _green.torus_green_ewald(r, derivs=2)

    def green_field(self, a):
        return _green.torus_green_grid(self.N, np.asarray(a, dtype=float))[0]

    def regular_field(self, a):
        a = np.asarray(a, dtype=float)
        G, Hnear = _green.torus_green_grid(self.N, a)
        rho = self.chart_radius(a, self.grid_points())
        with np.errstate(divide="ignore"):
            H = G + np.log(cutoff(rho, self.eta)) / (2.0 * math.pi)
        inner = rho <= self.eta
        use = inner & np.isfinite(Hnear)
        H[use] = Hnear[use]
        rest = inner & ~np.isfinite(Hnear)
        if np.any(rest):
            H[rest] = _green.torus_green_regular(self.chart(a, self.grid_points()[rest]))
        return H

    def regular_exact(self, a, x):
        """H(a, x) via the closed smooth Ewald form, valid through x = a."""
        y = self.chart(a, x)
        rho = np.linalg.norm(y, axis=-1)
        inner = _green.torus_green_regular(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = _green.torus_green_ewald(y) + np.log(cutoff(rho, self.eta)) / (2.0 * math.pi)
        return np.where(rho <= self.eta, inner, outer)

    def eigenmodes(self, n):
        out = []
        kmax = int(math.ceil(math.sqrt(n))) + 2
        ks = [(i, j) for i in range(-kmax, kmax + 1) for j in range(-kmax, kmax + 1)
              if (i > 0) or (i == 0 and j > 0)]
        ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
        for k in ks:
            mu = 4.0 * math.pi**2 * (k[0] ** 2 + k[1] ** 2)
            kv = np.array(k, dtype=float)
            out.append((mu, lambda x, kv=kv: math.sqrt(2.0) * np.cos(2 * math.pi * (np.asarray(x) @ kv))))
            out.append((mu, lambda x, kv=kv: math.sqrt(2.0) * np.sin(2 * math.pi * (np.asarray(x) @ kv))))
            if len(out) >= n:
                break
        return out[:n]

    def random_points(self, rng, n):
        return rng.random((n, 2))


# ---------------------------------------------------------------------------
# Sphere
# ---------------------------------------------------------------------------


class Sphere(Surface):
    kind = "sphere"
    dim_ambient = 3
    curvature = 1.0 / SPHERE_RADIUS**2

    def __init__(self, N: int, eta: float):
        self.N = N
        self.eta = eta
        self.R = SPHERE_RADIUS
        self.eta0 = 0.5 * math.pi * self.R
        self.T = SphericalTransform(N)
        l = self.T.l
        self._eigs = l * (l + 1) / self.R**2
        self.mu_max = float(np.max(self._eigs))
        with np.errstate(divide="ignore"):
            self._inv = np.where(self._eigs > 0, 1.0 / self._eigs, 0.0)
        self._w = self.T.weights

    @property
    def weights(self):
        return self._w

    @property
    def shape(self):
        return self._w.shape

    @property
    def h(self):
        return math.pi * self.R / self.N

    @property
    def eigenvalues(self):
        return self._eigs

    def to_coeffs(self, values):
        return self.T.analysis(values)

    def to_values(self, coeffs):
        return self.T.synthesis(coeffs)

    def _poisson(self, f):
        return self.T.synthesis(self.T.analysis(f) * self._inv)

    def _neglap(self, u):
        return self.T.synthesis(self.T.analysis(u) * self._eigs)

    def dirichlet_inner(self, u, v):
        cu = self.T.analysis(u)
        cv = cu if v is u else self.T.analysis(v)
        return float(np.sum(self._eigs * cu * cv))

    def grid_points(self):
        th, ph = np.meshgrid(self.T.theta, self.T.phi, indexing="ij")
        return self.from_angles(th, ph)

    def from_angles(self, theta, phi):
        st = np.sin(theta)
        return self.R * np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) + 0 * phi], axis=-1)

    def to_angles(self, p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p, axis=-1)
        return np.arccos(np.clip(p[..., 2] / r, -1.0, 1.0)), np.arctan2(p[..., 1], p[..., 0])

    def normalize_point(self, p):
        p = np.asarray(p, dtype=float)
        return self.R * p / np.linalg.norm(p, axis=-1, keepdims=True)

    def tangent_basis(self, a):
        n = self.normalize_point(a) / self.R
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = helper - (helper @ n) * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return np.stack([e1, e2])

    def chart(self, a, x):
        a = self.normalize_point(a)
        n = a / self.R
        E = self.tangent_basis(a)
        x = np.asarray(x, dtype=float)
        denom = self.R + x @ n
        return 2.0 * self.R * (x @ E.T) / denom[..., None]

    def chart_inverse(self, a, y):
        a = self.normalize_point(a)
        n = a / self.R
        E = self.tangent_basis(a)
        y = np.asarray(y, dtype=float)
        rho = np.linalg.norm(y, axis=-1)
        theta = 2.0 * np.arctan(rho / (2.0 * self.R))
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(rho[..., None] > 0, y / rho[..., None], 0.0)
        t = u @ E
        return self.R * (np.cos(theta)[..., None] * n + np.sin(theta)[..., None] * t)

    def angle(self, a, x):
        n = self.normalize_point(a) / self.R
        xn = np.asarray(x, dtype=float) / self.R
        c = np.clip(xn @ n, -1.0, 1.0)
        # atan2 form is accurate for small angles.
        s = np.linalg.norm(np.cross(xn, n), axis=-1)
        return np.arctan2(s, c)

    def chart_radius(self, a, x):
        return 2.0 * self.R * np.tan(0.5 * self.angle(a, x))

    def distance(self, a, b):
        return self.R * self.angle(a, b)

    def conformal_factor(self, a, x):
        rho = self.chart_radius(a, x)
        return 2.0 * np.log1p(rho**2 / (4.0 * self.R**2))

    def retract(self, a, v):
        """Exponential map along tangent coordinates v (in the frame of a)."""
        a = self.normalize_point(a)
        n = a / self.R
        E = self.tangent_basis(a)
        t = np.asarray(v) @ E
        s = np.linalg.norm(t)
        if s == 0:
            return a
        ang = s / self.R
        return self.R * (math.cos(ang) * n + math.sin(ang) * t / s)

    def green(self, a, x, method=None):
        a = self.normalize_point(a)
        if method in (None, "closed", "ewald"):
            return _green.sphere_green(a, np.asarray(x, dtype=float))
        if method == "series":
            c = np.cos(self.angle(a, x))
            return _green.sphere_green_series(c, 4000)
        raise ValueError(f"unknown Green's function method {method!r}")

    def green_field(self, a):
        return self.green(a, self.grid_points())

    def regular_exact(self, a, x):
        theta = self.angle(a, x)
        rho = 2.0 * self.R * np.tan(0.5 * theta)
        inner = -np.log(np.cos(0.5 * theta)) / (2.0 * math.pi) + _green.SPHERE_GREEN_CONST
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = self.green(a, x) + np.log(cutoff(rho, self.eta)) / (2.0 * math.pi)
        return np.where(rho <= self.eta, inner, outer)

    def regular_field(self, a):
        return self.regular_exact(a, self.grid_points())

    def eigenmodes(self, n):
        out = []
        order = np.argsort(self._eigs, kind="stable")
        for idx in order[1 : n + 1]:
            def ev(x, idx=idx):
                th, ph = self.to_angles(x)
                return self.T.basis_values(int(idx), th, ph)

            out.append((float(self._eigs[idx]), ev))
        return out

    def random_points(self, rng, n):
        u = rng.random((n, 2))
        return self.from_angles(np.arccos(1 - 2 * u[:, 0]), 2 * math.pi * u[:, 1])


def build_surface(kind: str, N: int | None = None, eta: float | None = None) -> Surface:
    """Construct a discretised model surface.

    ``N`` is the grid size (torus: power of two, at least 64) or the
    Gauss-Legendre order (sphere: at least 32). The default cut-off radius
    is 0.05 on the torus and 2% of the intrinsic diameter on the sphere.
    """
    if kind == "torus":
        N = 256 if N is None else int(N)
        if N < 64 or N & (N - 1):
            raise ValueError("torus grid size must be a power of two >= 64")
        eta = 0.05 if eta is None else float(eta)
        surf: Surface = Torus(N, eta)
    elif kind == "sphere":
        N = 48 if N is None else int(N)
        if N < 32:
            raise ValueError("sphere quadrature order must be >= 32")
        eta = 0.02 * math.pi * SPHERE_RADIUS if eta is None else float(eta)
        surf = Sphere(N, eta)
    else:
        raise ValueError(f"unknown surface kind {kind!r}")
    if not (0 < surf.eta < surf.eta0 / 4):
        raise ValueError(f"cut-off radius must lie in (0, {surf.eta0 / 4:.4g})")
    return surf


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def green(surface: Surface, a, x, method: str | None = None) -> np.ndarray:
    """G(a, x) with -Delta G(a, .) + 1 = delta_a and zero mean."""
    return surface.green(a, x, method)


def robin_extrapolated(surface: Surface, a, radii=None, directions: int = 2):
    """H(a, a) by even-order Richardson extrapolation along chart rays.

    Samples H(a, .) at chart radius r in +/- directions (odd terms cancel),
    then eliminates the r^2 and r^4 terms. Returns (value, diagnostics).
    """
    eta = surface.eta
    radii = np.array(radii if radii is not None else [eta / 4, eta / 8, eta / 16])
    a = surface.normalize_point(a)
    samples = []
    for r in radii:
        acc = []
        for k in range(directions):
            ang = math.pi * k / directions
            d = np.array([math.cos(ang), math.sin(ang)])
            y = np.stack([r * d, -r * d])
            x = surface.chart_inverse(a, y)
            rho = surface.chart_radius(a, x)
            g = surface.green(a, x)
            acc.extend(g + np.log(cutoff(rho, eta)) / (2.0 * math.pi))
        samples.append(np.mean(acc))
    samples = np.array(samples)
    A = np.stack([np.ones_like(radii), radii**2, radii**4], axis=1)
    coef = np.linalg.solve(A, samples)
    diffs = np.abs(samples - coef[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(diffs[:-1] / diffs[1:]) / np.log(radii[:-1] / radii[1:])
    return float(coef[0]), {"radii": radii.tolist(), "samples": samples.tolist(), "observed_orders": orders.tolist()}


def green_regular_part(surface: Surface, a, x) -> np.ndarray:
    """H(a, x) = G(a, x) + (1/2pi) ln psi_a(x).

    Off the diagonal this is evaluated directly; at x = a it is the
    even-order extrapolation of nearby values.
    """
    x = np.asarray(x, dtype=float)
    a = surface.normalize_point(a)
    rho = np.atleast_1d(surface.chart_radius(a, x))
    xf = x.reshape(-1, x.shape[-1])
    out = np.empty(len(xf))
    diag = rho.ravel() < 1e-12
    if np.any(~diag):
        g = surface.green(a, xf[~diag])
        out[~diag] = g + np.log(cutoff(rho.ravel()[~diag], surface.eta)) / (2.0 * math.pi)
    if np.any(diag):
        out[diag] = robin_extrapolated(surface, a)[0]
    return out.reshape(x.shape[:-1])


def _smooth_step(s):
    """C-infinity step: 1 for s <= 0, 0 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        up = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        down = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return down / (up + down)


def _pairing_smooth_part(surface: Surface, a, R: float) -> np.ndarray:
    key = (tuple(np.round(a, 15)), R)
    cache = surface.__dict__.setdefault("_pairing_cache", {})
    if key not in cache:
        x = surface.grid_points().reshape(-1, len(a))
        rho = surface.chart_radius(a, x)
        G = np.asarray(surface.green_field(a), dtype=float).reshape(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            smooth = G + _smooth_step(2.0 * rho / R - 1.0) * np.log(rho) / (2.0 * math.pi)
        # a pole sitting on a node: the smooth part's limit there is H(a, a)
        smooth[rho < 1e-12] = robin_constant(surface)
        if len(cache) > 16:
            cache.clear()
        cache[key] = smooth.reshape(surface.shape)
    return cache[key]


def green_pairing(surface: Surface, a, f, radial: int = 256, angular: int = 96) -> float:
    """Integral of G(a, .) f over the surface, accurate despite the logarithmic pole.

    ``f`` maps ambient points (n, d) to values. With a smooth bump w in the
    chart radius rho (1 on [0, eta0/2], 0 beyond eta0), G + w ln(rho)/2pi is
    smooth and goes on the grid; the remaining -(1/2pi) w ln rho is integrated
    in polar chart coordinates (t^2 = rho tames rho ln rho).
    """
    a = surface.normalize_point(a)
    R = surface.eta0
    x = surface.grid_points().reshape(-1, len(a))
    fx = np.asarray(f(x), dtype=float).reshape(surface.shape)
    regular = surface.integrate(_pairing_smooth_part(surface, a, R) * fx)
    t, wt = np.polynomial.legendre.leggauss(radial)
    t = 0.5 * math.sqrt(R) * (t + 1)
    wt = 0.5 * math.sqrt(R) * wt
    r = t**2
    th = 2 * math.pi * np.arange(angular) / angular
    y = (r[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]).reshape(-1, 2)
    pts = surface.chart_inverse(a, y)
    jac = np.exp(-surface.conformal_factor(a, pts))  # area element of the chart
    w = _smooth_step(2.0 * r / R - 1.0) * np.log(r)
    vals = w[:, None] * (f(pts) * jac).reshape(radial, angular)
    disc = float(np.sum(wt * 2 * t * r * vals.mean(axis=1)) * 2 * math.pi)
    return regular - disc / (2 * math.pi)


def robin_constant(surface: Surface) -> float:
    """Closed-form H(a, a); both model surfaces are homogeneous."""
    if surface.kind == "torus":
        return _green.torus_robin_constant()
    return _green.SPHERE_GREEN_CONST


def solve_poisson(surface: Surface, f) -> np.ndarray:
    return surface.solve_poisson(f)


def integrate(surface: Surface, values) -> float:
    return surface.integrate(values)


def gauss_curvature(surface: Surface, x) -> np.ndarray:
    return surface.gauss_curvature(x)


def conformal_factor(surface: Surface, a, x) -> np.ndarray:
    return surface.conformal_factor(a, x)


def eigenmodes(surface: Surface, n: int):
    return surface.eigenmodes(n)
