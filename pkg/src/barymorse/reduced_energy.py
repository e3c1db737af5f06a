"""Finite-dimensional reduced energy of m-point configurations.

For a positive weight K and distinct points A = (a_1, ..., a_m)

    F(A) = sum_i [ ln K(a_i) + 4 pi H(a_i, a_i) + 4 pi sum_{j != i} G(a_i, a_j) ].

Derivatives are taken in tangent coordinates at each point (chart axes on
the torus, normal coordinates on the sphere), so the Hessian at a critical
point has the intrinsic eigenvalue signature. Both model surfaces are
homogeneous, so the Robin function H(a, a) is a constant and contributes
nothing to the derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _green
from .surface import Surface, robin_constant

# ---------------------------------------------------------------------------
# Weight presets
# ---------------------------------------------------------------------------


@dataclass
class KFunction:
    """Analytic positive weight on a surface, with ambient derivatives.

    ``kind`` is one of ``constant``, ``trig`` (torus), ``gaussian`` or
    ``linear`` (sphere). Values, gradients and Hessians refer to the ambient
    coordinates (chart coordinates on the torus, R^3 on the sphere).
    """

    kind: str
    surface_kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg, surface: Surface) -> "KFunction":
        if isinstance(cfg, (int, float)):
            cfg = {"kind": "constant", "value": float(cfg)}
        cfg = dict(cfg)
        kind = cfg.pop("kind", "constant")
        k = cls(kind, surface.kind, cfg)
        k._validate(surface)
        return k

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params}

    def _validate(self, surface: Surface) -> None:
        allowed = {"torus": {"constant", "trig", "gaussian"}, "sphere": {"constant", "gaussian", "linear"}}
        if self.kind not in allowed[surface.kind]:
            raise ValueError(f"weight preset {self.kind!r} is not available on the {surface.kind}")
        vals = self.value(surface.grid_points())
        if not np.all(vals > 0):
            raise ValueError("weight must be positive on the whole surface")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def derivs(self, x):
        """(K, grad K, Hess K) at points x of shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        p = self.params
        if self.kind == "constant":
            c = float(p.get("value", 1.0))
            return np.full(n, c), np.zeros((n, d)), np.zeros((n, d, d))
        if self.kind == "trig":
            val = np.full(n, float(p.get("c0", 1.0)))
            grad = np.zeros((n, d))
            hess = np.zeros((n, d, d))
            for term in p.get("terms", []):
                kv = 2 * math.pi * np.asarray(term["k"], dtype=float)
                ph = x @ kv
                a, b = float(term.get("cos", 0.0)), float(term.get("sin", 0.0))
                c, s = np.cos(ph), np.sin(ph)
                val += a * c + b * s
                grad += np.outer(-a * s + b * c, kv)
                hess += np.einsum("n,i,j->nij", -a * c - b * s, kv, kv)
            return val, grad, hess
        if self.kind == "gaussian":
            val = np.full(n, float(p.get("base", 1.0)))
            grad = np.zeros((n, d))
            hess = np.zeros((n, d, d))
            eye = np.eye(d)
            images = [np.zeros(d)]
            if self.surface_kind == "torus":
                images = [np.array([i, j], dtype=float) for i in (-1, 0, 1) for j in (-1, 0, 1)]
            for bump in p.get("bumps", []):
                c0 = np.asarray(bump["center"], dtype=float)
                if self.surface_kind == "sphere":
                    c0 = _green.SPHERE_RADIUS * c0 / np.linalg.norm(c0)
                amp, sig = float(bump["amp"]), float(bump["sigma"])
                for img in images:
                    r = x - (c0 + img) if self.surface_kind == "sphere" else _green.wrap(x - c0) + img
                    e = amp * np.exp(-np.sum(r * r, axis=1) / (2 * sig**2))
                    val += e
                    grad += -e[:, None] * r / sig**2
                    hess += e[:, None, None] * (np.einsum("ni,nj->nij", r, r) / sig**4 - eye / sig**2)
            return val, grad, hess
        if self.kind == "linear":
            c0 = float(p.get("c0", 1.0))
            cv = np.asarray(p.get("c", [0.0, 0.0, 0.0]), dtype=float) / _green.SPHERE_RADIUS
            return c0 + x @ cv, np.tile(cv, (n, 1)), np.zeros((n, d, d))
        raise ValueError(f"unknown weight preset {self.kind!r}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.derivs(x.reshape(-1, x.shape[-1]))[0].reshape(x.shape[:-1])

    def log_derivs(self, x):
        K, g, H = self.derivs(x)
        gl = g / K[:, None]
        return np.log(K), gl, H / K[:, None, None] - np.einsum("ni,nj->nij", gl, gl)


def trig_preset(c0=1.0, c1=0.3, c2=0.2) -> dict:
    """K = c0 + c1 cos(2 pi x1) + c2 cos(2 pi x2)."""
    return {"kind": "trig", "c0": c0, "terms": [{"k": [1, 0], "cos": c1}, {"k": [0, 1], "cos": c2}]}


# ---------------------------------------------------------------------------
# Pairwise kernel with ambient derivatives
# ---------------------------------------------------------------------------


def _pair(surface: Surface, p, q):
    """G(p, q), its gradient in q, and Hessian in q (ambient)."""
    if surface.kind == "torus":
        return _green.torus_green_ewald(np.asarray(q) - np.asarray(p), derivs=2)
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    d2 = float(d @ d)
    g = -0.5 * math.log(d2) / (2 * math.pi) + _green.SPHERE_GREEN_CONST
    grad = -d / d2 / (2 * math.pi)
    hess = -(np.eye(3) / d2 - 2 * np.outer(d, d) / d2**2) / (2 * math.pi)
    return g, grad, hess


def _frames(surface: Surface, A):
    A = np.asarray(A, dtype=float)
    if surface.kind == "torus":
        return [np.eye(2)] * len(A)
    return [surface.tangent_basis(a) for a in A]


def normalize_config(surface: Surface, A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.stack([surface.normalize_point(a) for a in A])


def min_separation(surface: Surface, A) -> float:
    A = normalize_config(surface, A)
    m = len(A)
    if m < 2:
        return math.inf
    return min(float(surface.distance(A[i], A[j])) for i in range(m) for j in range(i + 1, m))


@dataclass
class ReducedValue:
    value: float
    near_collision: bool
    min_separation: float


def reduced_energy(surface: Surface, K: KFunction, A) -> ReducedValue:
    """F(A) with a near-collision flag (points closer than 4 eta)."""
    A = normalize_config(surface, A)
    m = len(A)
    lnK = np.log(K.value(A))
    val = float(np.sum(lnK)) + 4 * math.pi * m * robin_constant(surface)
    for i in range(m):
        for j in range(i + 1, m):
            val += 8 * math.pi * float(surface.green(A[i], A[j]))
    dmin = min_separation(surface, A)
    return ReducedValue(val, dmin < 4 * surface.eta, dmin)


def reduced_energy_derivs(surface: Surface, K: KFunction, A):
    """(F, gradient (2m,), Hessian (2m, 2m)) in tangent coordinates."""
    A = normalize_config(surface, A)
    m, d = A.shape
    lnK, glK, hlK = K.log_derivs(A)
    gamb = glK.copy()
    hamb = np.zeros((m, m, d, d))
    for i in range(m):
        hamb[i, i] = hlK[i]
    val = float(np.sum(lnK)) + 4 * math.pi * m * robin_constant(surface)
    for i in range(m):
        for j in range(i + 1, m):
            g, gq, hq = _pair(surface, A[i], A[j])
            val += 8 * math.pi * float(g)
            gamb[j] += 8 * math.pi * gq
            gamb[i] -= 8 * math.pi * gq
            hamb[i, i] += 8 * math.pi * hq
            hamb[j, j] += 8 * math.pi * hq
            hamb[i, j] -= 8 * math.pi * hq
            hamb[j, i] -= 8 * math.pi * hq
    E = _frames(surface, A)
    grad = np.concatenate([E[i] @ gamb[i] for i in range(m)])
    hess = np.zeros((2 * m, 2 * m))
    for i in range(m):
        for j in range(m):
            hess[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = E[i] @ hamb[i, j] @ E[j].T
    if surface.kind == "sphere":
        for i in range(m):
            normal = A[i] / surface.R
            hess[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] -= np.eye(2) * float(gamb[i] @ normal) / surface.R
    return val, grad, hess


def reduced_energy_grad(surface: Surface, K: KFunction, A) -> np.ndarray:
    return reduced_energy_derivs(surface, K, A)[1]


def reduced_energy_hessian(surface: Surface, K: KFunction, A) -> np.ndarray:
    return reduced_energy_derivs(surface, K, A)[2]


def move_config(surface: Surface, A, v) -> np.ndarray:
    """Displace each point along its tangent coordinates (flattened v)."""
    A = normalize_config(surface, A)
    v = np.asarray(v, dtype=float).reshape(len(A), 2)
    return np.stack([surface.retract(A[i], v[i]) for i in range(len(A))])


def fd_gradient(surface: Surface, K: KFunction, A, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central differences of F in tangent coordinates."""
    A = normalize_config(surface, A)
    n = 2 * len(A)
    f = lambda v: reduced_energy(surface, K, move_config(surface, A, v)).value
    out = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        out[k] = (-f(2 * e) + 8 * f(e) - 8 * f(-e) + f(-2 * e)) / (12 * h)
    return out


def fd_hessian(surface: Surface, K: KFunction, A, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central differences of F (second differences on the sphere).

    On the sphere, normal coordinates centred at each point are used, which
    reproduce the intrinsic Hessian at the configuration.
    """
    A = normalize_config(surface, A)
    n = 2 * len(A)
    f = lambda v: reduced_energy(surface, K, move_config(surface, A, v)).value
    H = np.zeros((n, n))
    f0 = f(np.zeros(n))
    for k in range(n):
        ek = np.zeros(n)
        ek[k] = h
        H[k, k] = (-f(2 * ek) + 16 * f(ek) - 30 * f0 + 16 * f(-ek) - f(-2 * ek)) / (12 * h * h)
        for l in range(k + 1, n):
            el = np.zeros(n)
            el[l] = h
            s = 0.0
            for a, b, w in ((1, 1, 64), (1, -1, -64), (-1, 1, -64), (-1, -1, 64),
                            (2, 2, 1), (2, -2, -1), (-2, 2, -1), (-2, -2, 1),
                            (2, 1, -8), (1, 2, -8), (-2, -1, -8), (-1, -2, -8),
                            (2, -1, 8), (1, -2, 8), (-2, 1, 8), (-1, 2, 8)):
                s += w * f(a * ek + b * el)
            H[k, l] = H[l, k] = s / (144 * h * h)
    return H


# ---------------------------------------------------------------------------
# Interaction and weight functions
# ---------------------------------------------------------------------------


def _log_interaction(surface: Surface, K: KFunction, A, i: int, x) -> np.ndarray:
    A = normalize_config(surface, A)
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    out = np.log(K.value(flat)) + 8 * math.pi * surface.regular_exact(A[i], flat)
    for j in range(len(A)):
        if j != i:
            out = out + 8 * math.pi * surface.green(A[j], flat)
    return out.reshape(x.shape[:-1])


def interaction_fn(surface: Surface, K: KFunction, A, i: int):
    """x -> K(x) exp(8 pi H(a_i, x) + 8 pi sum_{j != i} G(x, a_j))."""
    return lambda x: np.exp(_log_interaction(surface, K, A, i, x))


def weight_fn(surface: Surface, A, alpha, i: int):
    """x -> exp(8 pi (alpha_i - 1) H(a_i, x) + 8 pi sum_{j != i} (alpha_j - 1) G(a_j, x))."""
    A = normalize_config(surface, A)
    alpha = np.asarray(alpha, dtype=float)

    def g(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        out = 8 * math.pi * (alpha[i] - 1.0) * surface.regular_exact(A[i], flat)
        for j in range(len(A)):
            if j != i and alpha[j] != 1.0:
                out = out + 8 * math.pi * (alpha[j] - 1.0) * surface.green(A[j], flat)
        return np.exp(out).reshape(x.shape[:-1])

    return g


def interaction_values(surface: Surface, K: KFunction, A) -> np.ndarray:
    """F_i(a_i) for every i."""
    A = normalize_config(surface, A)
    return np.array([float(interaction_fn(surface, K, A, i)(A[i])) for i in range(len(A))])


def interaction_gradients(surface: Surface, K: KFunction, A) -> np.ndarray:
    """grad F_i at a_i in tangent coordinates, shape (m, 2).

    Uses grad_x ln F_i (a_i) = d F / d a_i, valid because the regular part
    is symmetric with vanishing diagonal gradient on homogeneous surfaces.
    """
    F = interaction_values(surface, K, A)
    g = reduced_energy_grad(surface, K, A).reshape(-1, 2)
    return F[:, None] * g


_STENCIL = ((0, 0, -60.0),) + tuple(
    (sx * s, sy * s, w)
    for (sx, sy) in ((1, 0), (-1, 0), (0, 1), (0, -1))
    for (s, w) in ((1, 16.0), (2, -1.0))
)


def chart_laplacian(surface: Surface, fn, a, h: float) -> float:
    """Fourth-order nine-point Laplacian of fn at a in the isothermal chart.

    The conformal factor vanishes at the chart centre, so this is the
    Laplace-Beltrami operator there.
    """
    y = np.array([[dx * h, dy * h] for dx, dy, _ in _STENCIL])
    w = np.array([c for _, _, c in _STENCIL])
    x = surface.chart_inverse(surface.normalize_point(a), y)
    return float(w @ fn(x)) / (12 * h * h)


def stability_quantity(surface: Surface, K: KFunction, A, h: float | None = None):
    """L(A) = sum_i (Delta F_i (a_i) - 2 K_g(a_i) F_i(a_i)).

    Returns (L, per-point terms). The Laplacian uses chart differences with
    step eta/8 by default.
    """
    A = normalize_config(surface, A)
    h = surface.eta / 8 if h is None else h
    terms = []
    for i in range(len(A)):
        Fi = interaction_fn(surface, K, A, i)
        lap = chart_laplacian(surface, Fi, A[i], h)
        kg = float(surface.gauss_curvature(A[i][None])[0])
        terms.append(lap - 2 * kg * float(Fi(A[i])))
    return float(sum(terms)), terms
