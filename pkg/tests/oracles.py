"""Reference computations that share no code with the package."""

import math
from itertools import product

import numpy as np

# eta(i) for the square lattice: Gamma(1/4) / (2 pi^(3/4))
_DEDEKIND_I = math.gamma(0.25) / (2 * math.pi**0.75)
TORUS_ROBIN = -math.log(2 * math.pi * _DEDEKIND_I**2) / (2 * math.pi)
SPHERE_R = 1 / (2 * math.sqrt(math.pi))
SPHERE_ROBIN = -(1 + math.log(math.pi)) / (4 * math.pi)


def torus_green(x1, x2, terms=40):
    """Mean-zero Green's function of the unit square torus with pole at the origin.

    Summing the Fourier series in the second variable in closed form leaves a
    series in k1 that converges exponentially when x2 is not an integer.
    """
    x2 = x2 % 1.0
    v = 0.5 * (x2 * x2 - x2 + 1.0 / 6.0)
    for k in range(1, terms):
        v += math.cos(2 * math.pi * k * x1) * math.cosh(2 * math.pi * k * (x2 - 0.5)) / (2 * math.pi * k * math.sinh(math.pi * k))
    return v


def sphere_green(a, x):
    """-(1/2 pi) ln|x - a| shifted so that its mean over the sphere of area one vanishes."""
    d = np.linalg.norm(np.asarray(x) - np.asarray(a), axis=-1)
    return -(np.log(d) - math.log(2 * SPHERE_R) + 0.5) / (2 * math.pi)


def fd4_gradient(f, x, h=1e-3):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def fd4_hessian(grad, x, h=1e-3):
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (-grad(x + 2 * e) + 8 * grad(x + e) - 8 * grad(x - e) + grad(x - 2 * e)) / (12 * h)
    return H


def torus_eigenvalue_count(below, kmax=20):
    """Number of nonzero lattice modes with 4 pi^2 |k|^2 < below."""
    return sum(1 for k1, k2 in product(range(-kmax, kmax + 1), repeat=2) if (k1, k2) != (0, 0) and 4 * math.pi**2 * (k1 * k1 + k2 * k2) < below)


def grid_scan_critical(f, n=96):
    """Discrete critical points of a periodic function on [0,1)^2 by neighbour comparison.

    Returns a dict index -> count, with index 0 for strict minima, 2 for
    strict maxima and 1 for saddles (sign changes around the 8-neighbour ring).
    """
    xs = np.arange(n) / n
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    F = f(X, Y)
    counts = {0: 0, 1: 0, 2: 0}
    ring = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    for i in range(n):
        for j in range(n):
            c = F[i, j]
            vals = np.array([F[(i + di) % n, (j + dj) % n] for di, dj in ring]) - c
            if np.all(vals > 0):
                counts[0] += 1
            elif np.all(vals < 0):
                counts[2] += 1
            else:
                s = np.sign(vals)
                changes = int(np.sum(s != np.roll(s, 1)))
                if changes >= 4:
                    counts[1] += 1
    return counts


def binomial(n, k):
    """Generalised binomial coefficient by the product formula over fractions."""
    from fractions import Fraction

    r = Fraction(1)
    for j in range(k):
        r *= Fraction(n - j, j + 1)
    assert r.denominator == 1
    return int(r)
