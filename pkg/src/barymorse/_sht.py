"""Real spherical-harmonic transform on a Gauss-Legendre x uniform grid.

Coefficients refer to the real basis that is orthonormal in L^2 of the
unit-area sphere. Ordering: degree-major, then order m = 0, 1c, 1s, 2c, 2s, ...
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft


def normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """P[m, l, j]: associated Legendre functions with int_{-1}^{1} P^2 dx = 1."""
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1, x.size))
    pmm = np.full(x.size, 1.0 / math.sqrt(2.0))
    for m in range(lmax + 1):
        if m > 0:
            pmm = math.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        P[m, m] = pmm
        if m + 1 <= lmax:
            P[m, m + 1] = math.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[m, l] = a * (x * P[m, l - 1] - b * P[m, l - 2])
    return P


class SphericalTransform:
    def __init__(self, nlat: int):
        self.nlat = nlat
        self.nlon = 2 * nlat
        self.lmax = nlat - 1
        x, w = np.polynomial.legendre.leggauss(nlat)
        # North pole first.
        self.x = x[::-1].copy()
        self.w = w[::-1].copy()
        self.theta = np.arccos(self.x)
        self.phi = 2.0 * math.pi * np.arange(self.nlon) / self.nlon
        L = self.lmax
        self.P = normalized_legendre(L, self.x)
        # Basis normalisation on the unit-area sphere: e = sqrt(4pi) * Y.
        self.norm = np.array([math.sqrt(2.0)] + [2.0] * L)
        ls, ms, cs = [], [], []
        for l in range(L + 1):
            ls.append(l), ms.append(0), cs.append(0)
            for m in range(1, l + 1):
                ls += [l, l]
                ms += [m, m]
                cs += [0, 1]
        self.l = np.array(ls)
        self.m = np.array(ms)
        self.cs = np.array(cs)
        self.size = len(self.l)
        # Quadrature weights on the unit-area sphere.
        self.weights = np.outer(self.w, np.full(self.nlon, 2.0 * math.pi / self.nlon)) / (4.0 * math.pi)
        self._cos_idx = np.where(self.cs == 0)[0]
        self._sin_idx = np.where(self.cs == 1)[0]

    def analysis(self, f: np.ndarray) -> np.ndarray:
        F = sfft.rfft(f, axis=1)[:, : self.lmax + 1]  # (nlat, M)
        wq = self.w * (2.0 * math.pi / self.nlon) / (4.0 * math.pi)
        # proj[m, l] = sum_j wq_j P[m,l,j] F[j,m]
        re = np.einsum("mlj,jm->ml", self.P, wq[:, None] * F.real)
        im = np.einsum("mlj,jm->ml", self.P, wq[:, None] * F.imag)
        out = np.empty(self.size)
        lc, mc = self.l[self._cos_idx], self.m[self._cos_idx]
        out[self._cos_idx] = self.norm[mc] * re[mc, lc]
        ls, msn = self.l[self._sin_idx], self.m[self._sin_idx]
        out[self._sin_idx] = -self.norm[msn] * im[msn, ls]
        return out

    def synthesis(self, c: np.ndarray) -> np.ndarray:
        L = self.lmax
        A = np.zeros((L + 1, L + 1))
        B = np.zeros((L + 1, L + 1))
        lc, mc = self.l[self._cos_idx], self.m[self._cos_idx]
        A[mc, lc] = c[self._cos_idx] * self.norm[mc]
        ls, msn = self.l[self._sin_idx], self.m[self._sin_idx]
        B[msn, ls] = c[self._sin_idx] * self.norm[msn]
        a = np.einsum("mlj,ml->jm", self.P, A)
        b = np.einsum("mlj,ml->jm", self.P, B)
        spec = np.zeros((self.nlat, self.nlon // 2 + 1), dtype=complex)
        spec[:, : L + 1] = (a - 1j * b) * (self.nlon / 2.0)
        spec[:, 0] = a[:, 0] * self.nlon
        return sfft.irfft(spec, n=self.nlon, axis=1)

    def basis_values(self, index: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        l, m, cs = int(self.l[index]), int(self.m[index]), int(self.cs[index])
        P = normalized_legendre(l, np.cos(np.ravel(theta)))[m, l].reshape(np.shape(theta))
        trig = np.cos(m * phi) if cs == 0 else np.sin(m * phi)
        return self.norm[m] * P * trig
