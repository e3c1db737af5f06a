"""Multistart search for critical points of the reduced energy.

Starts come from a scrambled Sobol sequence on the configuration space and
are discarded when two points lie closer than 2 eta. Each start is refined
by damped Newton on the gradient norm, with steps truncated so that no pair
of points approaches closer than eta. Converged points are classified by
the Hessian spectrum, deduplicated modulo permutation, and annotated with
the stability quantity L and the index at infinity 3m - 1 - Morse index.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .reduced_energy import (
    KFunction,
    min_separation,
    move_config,
    normalize_config,
    reduced_energy_derivs,
    stability_quantity,
)
from .surface import Surface


@dataclass
class SearchConfig:
    starts: int | None = None  # default 200 m
    seed: int = 0
    tol_grad: float = 1e-8
    tol_deg: float = 1e-6  # relative to the Hessian scale
    tol_pos: float = 1e-5
    max_iter: int = 80
    threads: int | None = None


@dataclass
class CriticalPoint:
    m: int
    points: np.ndarray
    F: float
    grad_norm: float
    eigs: np.ndarray
    morse_index: int
    nondegenerate: bool
    kernel_dim: int
    L: float | None = None
    in_K_minus: bool | None = None
    iota_inf: int | None = None
    near_collision: bool = False

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "points": np.round(self.points, 12).tolist(),
            "F": self.F,
            "grad_norm": self.grad_norm,
            "eigs": self.eigs.tolist(),
            "morse_index": self.morse_index,
            "nondeg": self.nondegenerate,
            "kernel_dim": self.kernel_dim,
            "L": self.L,
            "in_K_minus": self.in_K_minus,
            "iota_inf": self.iota_inf,
            "near_collision": self.near_collision,
        }


@dataclass
class SearchResult:
    m: int
    points: list
    starts_used: int
    starts_rejected: int
    converged: int
    degenerate_family: bool
    caveats: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "starts_used": self.starts_used,
            "starts_rejected": self.starts_rejected,
            "converged": self.converged,
            "degenerate_family": self.degenerate_family,
            "caveats": self.caveats,
            "critical_points": [p.to_dict() for p in self.points],
        }


def _thread_count(cfg: SearchConfig) -> int:
    if cfg.threads:
        return int(cfg.threads)
    return max(1, int(os.environ.get("BARYMORSE_THREADS", os.cpu_count() or 1)))


def starting_configurations(surface: Surface, m: int, n: int, seed: int):
    """Sobol starts on the configuration space; returns (accepted, rejected count)."""
    dim = 2 * m
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    u = sampler.random(int(2 ** math.ceil(math.log2(max(2 * n, 2)))))
    out, rejected = [], 0
    for row in u:
        if len(out) >= n:
            break
        pts = row.reshape(m, 2)
        if surface.kind == "sphere":
            A = surface.from_angles(np.arccos(1 - 2 * pts[:, 0]), 2 * math.pi * pts[:, 1])
        else:
            A = pts.copy()
        if m > 1 and min_separation(surface, A) < 2 * surface.eta:
            rejected += 1
            continue
        out.append(A)
    return out, rejected


def newton_refine(surface: Surface, K: KFunction, A, cfg: SearchConfig):
    """Damped Newton for grad F = 0 with a collision barrier.

    Returns (A, grad_norm, converged).
    """
    A = normalize_config(surface, A)
    eta = surface.eta
    _, g, H = reduced_energy_derivs(surface, K, A)
    gn = float(np.linalg.norm(g))
    for _ in range(cfg.max_iter):
        if gn < cfg.tol_grad:
            return A, gn, True
        w, V = np.linalg.eigh(H)
        scale = max(float(np.max(np.abs(w))), 1e-300)
        # Regularised Newton: invert |eigenvalues| floored relative to the scale
        # keeps the step well defined near degenerate directions.
        keep = np.abs(w) > 1e-10 * scale
        winv = np.divide(1.0, w, out=np.zeros_like(w), where=keep)
        step = -V @ (winv * (V.T @ g))
        nstep = np.linalg.norm(step)
        if nstep > 0.1:
            step *= 0.1 / nstep
        t = 1.0
        accepted = False
        while t > 1e-6:
            B = move_config(surface, A, t * step)
            if len(A) > 1 and min_separation(surface, B) < eta:
                t *= 0.5
                continue
            _, g2, H2 = reduced_energy_derivs(surface, K, B)
            gn2 = float(np.linalg.norm(g2))
            if gn2 < (1 - 1e-4 * t) * gn or gn2 < cfg.tol_grad:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # Fall back to a gradient step on the squared residual.
            d = -(H @ g)
            nd = np.linalg.norm(d)
            if nd == 0:
                break
            d *= min(0.05, gn) / nd
            B = move_config(surface, A, d)
            if len(A) > 1 and min_separation(surface, B) < eta:
                break
            _, g2, H2 = reduced_energy_derivs(surface, K, B)
            gn2 = float(np.linalg.norm(g2))
            if gn2 >= gn:
                break
        A, g, H, gn = B, g2, H2, gn2
    return A, gn, gn < cfg.tol_grad


def classify(surface: Surface, K: KFunction, A, cfg: SearchConfig | None = None) -> CriticalPoint:
    """Hessian signature, L(A), membership of K^- and index at infinity."""
    cfg = cfg or SearchConfig()
    A = normalize_config(surface, A)
    m = len(A)
    F, g, H = reduced_energy_derivs(surface, K, A)
    eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = max(float(np.max(np.abs(eigs))), 1.0)
    tol = cfg.tol_deg * scale
    kernel = int(np.sum(np.abs(eigs) <= tol))
    index = int(np.sum(eigs < -tol))
    L, _ = stability_quantity(surface, K, A)
    nondeg = kernel == 0
    return CriticalPoint(
        m=m,
        points=canonical(surface, A),
        F=float(F),
        grad_norm=float(np.linalg.norm(g)),
        eigs=eigs,
        morse_index=index,
        nondegenerate=nondeg,
        kernel_dim=kernel,
        L=float(L),
        in_K_minus=bool(L < 0),
        iota_inf=(3 * m - 1 - index) if (nondeg and L < 0) else None,
        near_collision=bool(min_separation(surface, A) < 4 * surface.eta),
    )


def canonical(surface: Surface, A) -> np.ndarray:
    """Lexicographically smallest ordering of the configuration."""
    A = normalize_config(surface, A)
    if surface.kind == "torus":
        A = np.mod(A, 1.0)
        A[np.isclose(A, 1.0, atol=1e-13)] = 0.0
    order = np.lexsort(tuple(np.round(A, 9).T[::-1]))
    return A[order]


def config_distance(surface: Surface, A, B) -> float:
    """Smallest max-pointwise distance over relabelings."""
    A = normalize_config(surface, A)
    B = normalize_config(surface, B)
    best = math.inf
    for perm in itertools.permutations(range(len(A))):
        d = max(float(surface.distance(A[i], B[p])) for i, p in enumerate(perm))
        best = min(best, d)
    return best


def dedupe(surface: Surface, configs, tol_pos: float = 1e-5):
    """Collapse configurations that agree within tol_pos modulo permutation."""
    reps: list = []
    for A in configs:
        if not any(config_distance(surface, A, B) < tol_pos for B in reps):
            reps.append(canonical(surface, A))
    return reps


def find_critical_points(surface: Surface, K: KFunction, m: int, cfg: SearchConfig | None = None) -> SearchResult:
    cfg = cfg or SearchConfig()
    n = cfg.starts if cfg.starts is not None else 200 * m
    starts, rejected = starting_configurations(surface, m, n, cfg.seed)
    work = lambda A: newton_refine(surface, K, A, cfg)
    threads = _thread_count(cfg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            refined = list(ex.map(work, starts))
    else:
        refined = [work(A) for A in starts]
    conv = [A for A, gn, ok in refined if ok]
    reps = dedupe(surface, conv, cfg.tol_pos)
    points = [classify(surface, K, A, cfg) for A in reps]
    points.sort(key=lambda p: (p.morse_index, round(p.F, 9), tuple(np.round(p.points, 9).ravel())))
    caveats = []
    degenerate = any(not p.nondegenerate for p in points)
    if degenerate:
        caveats.append("degenerate critical points found; they are excluded from Morse counts")
    if any(p.near_collision for p in points):
        caveats.append("some critical configurations have points closer than 4 eta")
    return SearchResult(m, points, len(starts), rejected, len(conv), degenerate, caveats)


CSV_COLUMNS = ["m", "points", "F", "grad_norm", "eigs", "morse_index", "nondeg", "L", "in_K_minus", "iota_inf"]


def to_csv(result: SearchResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in result.points:
        d = p.to_dict()
        w.writerow([
            d["m"],
            json.dumps(d["points"]),
            repr(d["F"]),
            repr(d["grad_norm"]),
            json.dumps([float(e) for e in d["eigs"]]),
            d["morse_index"],
            d["nondeg"],
            repr(d["L"]),
            d["in_K_minus"],
            "" if d["iota_inf"] is None else d["iota_inf"],
        ])
    return buf.getvalue()


def from_records(records) -> list:
    """Rebuild CriticalPoint objects from dicts (as written by to_dict)."""
    out = []
    for d in records:
        out.append(
            CriticalPoint(
                m=int(d["m"]),
                points=np.asarray(d["points"], dtype=float),
                F=float(d["F"]),
                grad_norm=float(d.get("grad_norm", 0.0)),
                eigs=np.asarray(d.get("eigs", []), dtype=float),
                morse_index=int(d["morse_index"]),
                nondegenerate=bool(d.get("nondeg", d.get("nondegenerate", True))),
                kernel_dim=int(d.get("kernel_dim", 0)),
                L=None if d.get("L") is None else float(d["L"]),
                in_K_minus=d.get("in_K_minus"),
                iota_inf=d.get("iota_inf"),
            )
        )
    return out
