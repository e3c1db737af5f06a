"""Spectral Newton solver for the mean field equation.

Unknowns are mean-zero fields written in Dirichlet-orthonormal spectral
coordinates, where the Riesz gradient of

    J(u) = 1/2 |grad u|^2 - rho ln int K e^u

is z - rho * dual(q), q = K e^u / int K e^u, and the second variation is
I - rho D^-1/2 (M_q - q q^T) D^-1/2 with M_q the multiplication by q.
Newton systems are symmetric but indefinite away from minima and are
solved with MINRES.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .bubbles import _coords, project_to_V
from .functional import energy, energy_grad, gradient_pairing, log_partition, weight_on_grid
from .surface import Surface

__all__ = [
    "SolverConfig",
    "SolverState",
    "SpectrumReport",
    "continuation",
    "energy",
    "energy_grad",
    "gradient_pairing",
    "linearized_spectrum",
    "pde_residual",
    "solve_mf",
]


@dataclass
class SolverConfig:
    tol: float = 1e-9  # Dirichlet norm of the gradient
    max_iter: int = 60
    merit: str = "energy"  # "energy": J decreases on every step; "residual": |grad J| decreases
    blowup: float | None = None  # max u threshold, default 4 ln(1/h)
    max_step: float = 5.0  # cap on the Dirichlet length of a Newton step
    seed: int = 0


@dataclass
class SolverState:
    rho: float
    u: np.ndarray
    grad_norm: float
    J: float
    residual: float
    status: str  # converged | blowup | max_iter | stalled
    iterations: int
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def summary(self) -> dict:
        return {
            "rho": self.rho,
            "status": self.status,
            "iterations": self.iterations,
            "J": self.J,
            "grad_norm": self.grad_norm,
            "pde_residual": self.residual,
            "max_u": float(np.max(self.u)),
        }


def pde_residual(surface: Surface, K, rho: float, u) -> float:
    """L^2 norm of -Delta u - rho (K e^u / int K e^u - 1)."""
    _, q = log_partition(surface, weight_on_grid(surface, K), u)
    r = surface.neg_laplacian(u) - rho * (q - 1.0)
    return math.sqrt(max(surface.l2_inner(r, r), 0.0))


def _initial_field(surface: Surface, init, seed: int) -> np.ndarray:
    if init is None or (isinstance(init, str) and init == "zero"):
        return np.zeros(surface.shape)
    if isinstance(init, str) and init == "random":
        rng = np.random.default_rng(seed)
        C = _coords(surface)
        z = np.zeros(len(C.idx))
        k = min(20, len(z))
        z[:k] = 1e-2 * rng.standard_normal(k)
        return C.from_z(z)
    u = np.asarray(init, dtype=float)
    if u.shape != surface.shape:
        raise ValueError(f"initial field has shape {u.shape}, expected {surface.shape}")
    return u - surface.mean(u)


def solve_mf(surface: Surface, K, rho: float, init=None, cfg: SolverConfig | None = None) -> SolverState:
    """Damped Newton with a gradient fallback for -Delta u = rho (K e^u / int K e^u - 1)."""
    cfg = cfg or SolverConfig()
    if rho <= 0:
        raise ValueError("rho must be positive")
    if cfg.merit not in ("energy", "residual"):
        raise ValueError("merit must be 'energy' or 'residual'")
    C = _coords(surface)
    Kg = weight_on_grid(surface, K)
    blowup = cfg.blowup if cfg.blowup is not None else 4.0 * math.log(1.0 / surface.h)
    z = C.to_z(_initial_field(surface, init, cfg.seed))

    def evaluate(z):
        u = C.from_z(z)
        lnZ, q = log_partition(surface, Kg, u)
        return u, q, 0.5 * float(z @ z) - rho * lnZ, z - rho * C.dual(q)

    u, q, J, g = evaluate(z)
    gn = float(np.linalg.norm(g))
    history = [{"J": J, "grad_norm": gn}]
    status = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if gn < cfg.tol:
            status = "converged"
            it -= 1
            break
        if float(np.max(u)) > blowup:
            status = "blowup"
            it -= 1
            break
        n = len(z)

        def hv(v, q=q):
            h = C.from_z(v)
            qh = q * h
            return v - rho * (C.dual(qh) - C.dual(q) * surface.integrate(qh))

        op = LinearOperator((n, n), matvec=hv, dtype=float)
        d, _ = minres(op, -g, rtol=1e-10, maxiter=300)
        if cfg.merit == "energy" and d @ g >= 0:
            d = -g
        nd = float(np.linalg.norm(d))
        if nd > cfg.max_step:
            d *= cfg.max_step / nd
        t, accepted = 1.0, False
        while t > 1e-10:
            zn = z + t * d
            un, qn, Jn, gnv = evaluate(zn)
            gnn = float(np.linalg.norm(gnv))
            if cfg.merit == "energy":
                ok = Jn <= J + 1e-4 * t * float(d @ g)
            else:
                ok = gnn <= (1.0 - 1e-4 * t) * gn
            if ok and np.all(np.isfinite(un)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "stalled"
            it -= 1
            break
        z, u, q, J, g, gn = zn, un, qn, Jn, gnv, gnn
        history.append({"J": J, "grad_norm": gn, "step": t})
    else:
        if gn < cfg.tol:
            status = "converged"
    return SolverState(rho, u, gn, J, pde_residual(surface, K, rho, u), status, it, history)


# ---------------------------------------------------------------------------
# Linearised operator
# ---------------------------------------------------------------------------


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # linearised operator, ascending
    hessian_eigenvalues: np.ndarray  # second variation of J (with the rank-one term), ascending
    morse_index: int
    kernel_dim: int
    hessian_morse_index: int
    modes: int
    tol: float

    @property
    def generalized_index(self) -> int:
        return self.morse_index + self.kernel_dim

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "hessian_eigenvalues": self.hessian_eigenvalues.tolist(),
            "morse_index": self.morse_index,
            "kernel_dim": self.kernel_dim,
            "generalized_index": self.generalized_index,
            "hessian_morse_index": self.hessian_morse_index,
            "modes": self.modes,
        }


def _galerkin(surface: Surface, q: np.ndarray, modes: int):
    """Multiplication by q in the lowest non-constant L^2-orthonormal modes."""
    C = _coords(surface)
    mu = np.asarray(surface.eigenvalues)
    sel = C.idx[np.argsort(mu[C.idx], kind="stable")][:modes]
    M = np.empty((len(sel), len(sel)))
    c = np.zeros(len(mu))
    for j, k in enumerate(sel):
        c[k] = 1.0
        ek = surface.to_values(c)
        c[k] = 0.0
        M[:, j] = surface.to_coeffs(q * ek)[sel]
    M = 0.5 * (M + M.T)
    b = surface.to_coeffs(q)[sel]
    return mu[sel], M, b


def linearized_spectrum(
    surface: Surface, K, rho: float, omega=None, n: int = 10, modes: int = 256, tol: float = 1e-6
) -> SpectrumReport:
    """Lowest n eigenvalues of -Delta - rho K e^w / int K e^w on mean-zero fields.

    Galerkin projection onto the ``modes`` lowest eigenmodes; the second
    variation of J adds back rho (int q e_j)(int q e_k). ``tol`` is the
    kernel threshold relative to max(1, rho).
    """
    omega = np.zeros(surface.shape) if omega is None else np.asarray(omega, dtype=float)
    _, q = log_partition(surface, weight_on_grid(surface, K), omega)
    mu, M, b = _galerkin(surface, q, modes)
    T = np.diag(mu) - rho * M
    ev = np.linalg.eigvalsh(T)
    hv = np.linalg.eigvalsh(T + rho * np.outer(b, b))
    thr = tol * max(1.0, abs(rho))
    return SpectrumReport(
        eigenvalues=ev[:n],
        hessian_eigenvalues=hv[:n],
        morse_index=int(np.sum(ev < -thr)),
        kernel_dim=int(np.sum(np.abs(ev) <= thr)),
        hessian_morse_index=int(np.sum(hv < -thr)),
        modes=len(mu),
        tol=thr,
    )


# ---------------------------------------------------------------------------
# Continuation towards a resonant value
# ---------------------------------------------------------------------------


@dataclass
class BranchRecord:
    m: int
    direction: str
    steps: list
    outcome: str  # converged | blown-up | failed | undetermined
    limit: dict | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s, sort_keys=True) + "\n" for s in self.steps)

    def to_dict(self) -> dict:
        return {"m": self.m, "direction": self.direction, "outcome": self.outcome, "limit": self.limit, "steps": self.steps}


def _step_record(surface, K, state: SolverState, mu: float, m: int, spectrum_modes: int) -> tuple[dict, object]:
    rec = {"mu": mu, **state.summary()}
    if state.converged:
        spec = linearized_spectrum(surface, K, state.rho, state.u, n=6, modes=spectrum_modes)
        rec.update(morse_index=spec.morse_index, kernel_dim=spec.kernel_dim, generalized_index=spec.generalized_index)
    dec = None
    try:
        dec = project_to_V(surface, state.u, m)
        rec.update(in_V=dec.in_V, lam=dec.lam.tolist(), A=dec.A.tolist(), w_norm=dec.w_norm)
    except ValueError as exc:
        rec.update(in_V=False, projection_error=str(exc))
    return rec, dec


def continuation(
    surface: Surface,
    K,
    m: int,
    direction: str,
    schedule,
    init=None,
    cfg: SolverConfig | None = None,
    min_mu: float = 1e-5,
    spectrum_modes: int = 64,
) -> BranchRecord:
    """Follow solutions of the equation at rho = 8 pi m (1 +/- mu) as mu decreases along ``schedule``.

    Each solve is warm-started from the previous solution; a failed step is
    retried at the midpoint towards the last successful mu, down to a gap
    of ``min_mu``. Every state is projected onto sums of m bubbles. The
    outcome is ``converged`` when the last solve at rho = 8 pi m succeeds
    with bounded data, ``blown-up`` when the tail of the branch sits in the
    bubble neighbourhood with growing rates.
    """
    if direction not in ("sup", "sub"):
        raise ValueError("direction must be 'sup' or 'sub'")
    sched = [float(x) for x in schedule]
    if any(x <= 0 for x in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("schedule must be positive and strictly decreasing")
    cfg = cfg or SolverConfig(merit="residual")
    sign = 1.0 if direction == "sup" else -1.0
    steps, decs = [], []
    u = init
    if u is None:
        u = _ramp_start(surface, K, 8 * math.pi * m * (1 + sign * sched[0]), cfg)
    last_mu = None
    queue = list(sched)
    while queue:
        mu = queue.pop(0)
        rho = 8 * math.pi * m * (1 + sign * mu)
        state = solve_mf(surface, K, rho, u, cfg)
        rec, dec = _step_record(surface, K, state, mu, m, spectrum_modes)
        steps.append(rec)
        if state.converged:
            u, last_mu = state.u, mu
            decs.append(dec)
            continue
        if last_mu is not None and last_mu - mu > min_mu:
            queue.insert(0, mu)
            queue.insert(0, 0.5 * (last_mu + mu))
            continue
        break
    ok = [s for s in steps if s.get("status") == "converged"]
    outcome, limit = "failed", None
    if ok:
        tail = [d for d in decs[-3:] if d is not None and d.in_V]
        lam_series = [max(s["lam"]) for s in ok if s.get("in_V")]
        growing = len(lam_series) >= 2 and all(b > a for a, b in zip(lam_series, lam_series[1:]))
        if tail and len(tail) == min(3, len(decs)) and growing:
            outcome = "blown-up"
            limit = _blowup_limit(surface, K, tail[-1])
        elif not any(s.get("in_V") for s in ok[-2:]):
            final = solve_mf(surface, K, 8 * math.pi * m, u, cfg)
            steps.append({"mu": 0.0, **final.summary()})
            outcome = "converged" if final.converged else "undetermined"
        else:
            outcome = "undetermined"
    growth = [max(s["lam"]) for s in steps if s.get("in_V")]
    if len(growth) >= 2:
        steps[-1]["lam_monotone"] = bool(all(b >= a for a, b in zip(growth, growth[1:])))
    return BranchRecord(m, direction, steps, outcome, limit)


def _ramp_start(surface, K, rho, cfg, stages: int = 8):
    """Warm start for a cold branch: solve along rho / 4 -> rho and return the last converged field."""
    u = None
    for r in np.linspace(0.25 * rho, rho, stages)[:-1]:
        state = solve_mf(surface, K, float(r), u, cfg)
        if not state.converged:
            break
        u = state.u
    return u


def _blowup_limit(surface, K, dec) -> dict:
    """Refine the fitted concentration points to a critical configuration and report L there."""
    from .critical_search import SearchConfig, classify, config_distance, newton_refine

    out = {"fitted_A": dec.A.tolist(), "lam": dec.lam.tolist()}
    A, _, ok = newton_refine(surface, K, dec.A, SearchConfig())
    out["refined_converged"] = bool(ok)
    if ok:
        cp = classify(surface, K, A)
        out.update(critical_A=cp.points.tolist(), L=cp.L, morse_index=cp.morse_index,
                   distance=config_distance(surface, dec.A, A))
    return out
