"""Morse inequalities at infinity, the Euler counting identity and existence certificates.

Inputs are index counts: nu[i] counts solutions of the mean field equation
with Morse index i (supplied by the user or the solver, default zeros) and
nu_inf[q] counts nondegenerate critical points of the reduced energy with
L < 0 and index at infinity q. Everything here is integer arithmetic on
those counts and a Betti table of the order m - 1 barycenter space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .topology import BettiTable, MissingTableError, gen_binomial


@dataclass
class IndexCounts:
    m: int
    nu: list
    nu_inf: list
    records: list | None = None  # classified critical points, when available
    excluded: list = field(default_factory=list)  # degenerate records left out of nu_inf
    nu_supplied: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        self.nu = [int(x) for x in self.nu]
        self.nu_inf = [int(x) for x in self.nu_inf]
        if any(x < 0 for x in self.nu + self.nu_inf):
            raise ValueError("index counts must be nonnegative")
        width = 3 * self.m
        if len(self.nu_inf) > width and any(self.nu_inf[width:]):
            raise ValueError(f"indices at infinity lie in [0, {width - 1}]")
        self.nu_inf = (self.nu_inf + [0] * width)[:width]

    def nu_at(self, i: int) -> int:
        return self.nu[i] if 0 <= i < len(self.nu) else 0

    def inf_at(self, q: int) -> int:
        return self.nu_inf[q] if 0 <= q < len(self.nu_inf) else 0

    @property
    def m_bar(self) -> int:
        return len(self.nu) - 1 if self.nu_supplied else 3 * self.m - 1

    @classmethod
    def from_records(cls, m: int, records, nu=None) -> "IndexCounts":
        """Count indices at infinity from classified critical points.

        Degenerate records are excluded and remembered so they can be reported.
        """
        nu_inf = [0] * (3 * m)
        excluded = []
        kept = []
        for r in records:
            if r.m != m:
                raise ValueError(f"record of order {r.m} given for m = {m}")
            if not r.nondegenerate:
                excluded.append(r)
                continue
            kept.append(r)
            if r.iota_inf is not None:
                nu_inf[int(r.iota_inf)] += 1
        supplied = nu is not None
        return cls(m, list(nu) if supplied else [0] * (3 * m), nu_inf, kept, excluded, supplied)


@dataclass
class Inequality:
    k: int
    lhs: int
    rhs: int

    @property
    def holds(self) -> bool:
        return self.lhs >= self.rhs

    @property
    def margin(self) -> int:
        return self.lhs - self.rhs

    def to_dict(self) -> dict:
        return {"k": self.k, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "margin": self.margin}


def _require_order(m: int) -> None:
    if m < 2:
        raise ValueError("the Morse relations at infinity need m >= 2")


def check_inequalities(counts: IndexCounts, betti_prev: BettiTable | None) -> list[Inequality]:
    """nu_k + nu_inf_k >= beta_{k-1} of the order m - 1 table, for 2 <= k <= max(3m - 1, m_bar)."""
    _require_order(counts.m)
    if betti_prev is None:
        raise MissingTableError(f"no Betti table of order {counts.m - 1}")
    if betti_prev.m != counts.m - 1:
        raise ValueError(f"need a table of order {counts.m - 1}, got order {betti_prev.m}")
    top = max(3 * counts.m - 1, counts.m_bar)
    return [
        Inequality(k, counts.nu_at(k) + counts.inf_at(k), betti_prev[k - 1]) for k in range(2, top + 1)
    ]


def alternating_inf(counts: IndexCounts) -> int:
    return sum((-1) ** q * n for q, n in enumerate(counts.nu_inf))


def euler_identity(counts: IndexCounts, chi: int, m: int | None = None) -> tuple[int, int, int]:
    m = counts.m if m is None else m
    _require_order(m)
    lhs = sum((-1) ** i * n for i, n in enumerate(counts.nu)) + alternating_inf(counts)
    rhs = gen_binomial(m - 1 - chi, m - 1)
    return lhs, rhs, lhs - rhs


def solution_lower_bound(counts: IndexCounts, chi: int, m: int | None = None) -> int:
    m = counts.m if m is None else m
    _require_order(m)
    return abs(gen_binomial(m - 1 - chi, m - 1) - alternating_inf(counts))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

HOLDS = "holds"
NOT_EVALUABLE = "not evaluable"


@dataclass
class Certificate:
    id: str
    hypotheses: list  # [(text, True/False/None)]
    conclusion: str
    status: str = HOLDS
    witness: list = field(default_factory=list)
    multiplicity: int | None = None
    conditional: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "hypotheses": [{"text": t, "holds": h} for t, h in self.hypotheses],
            "conclusion": self.conclusion,
            "witness": self.witness,
            "multiplicity": self.multiplicity,
            "conditional_on_search_completeness": self.conditional,
        }


def _beta(betti_prev: BettiTable | None, m: int, degree: int):
    """beta_degree of the order m-1 table, or None when unknown.

    Degrees at or above 3(m-1) vanish and degree 3m-4 is nonzero without a table;
    in the latter case the returned pair flags the value as a lower bound.
    Returns (value, exact).
    """
    if degree < 0 or degree >= 3 * (m - 1):
        return 0, True
    if betti_prev is not None:
        return betti_prev[degree], True
    if degree == 3 * m - 4:
        return 1, False
    return None, False


def _minimum_certificates(counts: IndexCounts) -> list[Certificate]:
    """Certificates from the signs of L at local minima and at index-2 critical points."""
    recs = counts.records
    if recs is None:
        return []
    m = counts.m
    out = []
    minima = [i for i, r in enumerate(recs) if r.morse_index == 0]
    if minima and all(recs[i].L is not None and recs[i].L < 0 for i in minima):
        out.append(
            Certificate(
                "minima_all_unstable",
                [("a local minimum of the reduced energy was found", True),
                 ("L < 0 at every local minimum found", True)],
                f"at least one solution of generalized Morse index {3 * m}",
                witness=minima,
                conditional=True,
            )
        )
    if m >= 2:
        saddles = [i for i, r in enumerate(recs) if r.morse_index == 2]
        if all(recs[i].L is not None and recs[i].L > 0 for i in saddles):
            out.append(
                Certificate(
                    "index_two_all_stable",
                    [("L > 0 at every critical point of Morse index 2 found" + ("" if saddles else " (none found)"), True)],
                    f"at least one solution of generalized Morse index {3 * m - 3}",
                    witness=saddles,
                    conditional=True,
                )
            )
    return out


def _gap_certificates(counts: IndexCounts, betti_prev: BettiTable | None) -> list[Certificate]:
    """Missing index at infinity paired with a nonzero Betti number forces a solution of that index."""
    m = counts.m
    out = []
    for q0 in range(2, 3 * m - 2):
        if counts.inf_at(q0) != 0:
            continue
        beta, exact = _beta(betti_prev, m, q0 - 1)
        no_inf = (f"no critical point at infinity of index {q0}", True)
        if beta is None:
            out.append(
                Certificate(
                    f"index_gap_q{q0}",
                    [no_inf, (f"beta_{q0 - 1} of the order {m - 1} barycenter space is nonzero", None)],
                    f"at least one solution of Morse index {q0}",
                    status=NOT_EVALUABLE,
                )
            )
            continue
        if beta == 0:
            continue
        mult_text = f"at least {beta}" if exact else "at least 1 (table absent, beta >= 1)"
        out.append(
            Certificate(
                f"index_gap_q{q0}",
                [no_inf, (f"beta_{q0 - 1} of the order {m - 1} barycenter space is nonzero ({beta}{'' if exact else '+'})", True)],
                f"solutions of Morse index {q0}: {mult_text}",
                multiplicity=beta,
            )
        )
    return out


def _isolated_certificates(counts: IndexCounts, betti_prev: BettiTable | None) -> list[Certificate]:
    """An index at infinity whose neighbours are absent and whose Betti number vanishes forces a solution."""
    m = counts.m
    out = []
    for q0 in range(3 * m):
        if counts.inf_at(q0) == 0 or counts.inf_at(q0 - 1) or counts.inf_at(q0 + 1):
            continue
        beta, _ = _beta(betti_prev, m, q0 - 1)
        hyps = [
            (f"a critical point at infinity of index {q0} exists", True),
            (f"no critical point at infinity of index {q0 - 1} or {q0 + 1}", True),
        ]
        witness = _witness(counts, q0)
        if beta is None:
            out.append(
                Certificate(
                    f"isolated_index_q{q0}",
                    hyps + [(f"beta_{q0 - 1} of the order {m - 1} barycenter space vanishes", None)],
                    "at least one solution",
                    status=NOT_EVALUABLE,
                    witness=witness,
                )
            )
        elif beta == 0:
            out.append(
                Certificate(
                    f"isolated_index_q{q0}",
                    hyps + [(f"beta_{q0 - 1} of the order {m - 1} barycenter space vanishes", True)],
                    "at least one solution",
                    witness=witness,
                )
            )
    if m == 4 and counts.inf_at(3) > 0 and counts.inf_at(4) == 0:
        # Indices at infinity are at least m - 1 = 3, so index 2 cannot occur.
        out.append(
            Certificate(
                "order_four_local_max",
                [("a critical point at infinity of index 3 exists", True),
                 ("no critical point at infinity of index 4", True)],
                "at least one solution",
                witness=_witness(counts, 3),
            )
        )
    return out


def _count_violation_certificates(counts: IndexCounts, betti_prev: BettiTable | None) -> list[Certificate]:
    m = counts.m
    a, b, c = counts.inf_at(3 * m - 3), counts.inf_at(3 * m - 2), counts.inf_at(3 * m - 1)
    out = []
    if b < c:
        out.append(
            Certificate(
                "top_count_violation",
                [(f"nu_inf[{3 * m - 2}] = {b} < nu_inf[{3 * m - 1}] = {c}", True)],
                "at least one solution",
            )
        )
    beta, exact = _beta(betti_prev, m, 3 * m - 4)
    # beta only enters with a minus sign, so a lower bound suffices to certify a violation.
    if a - beta < b - c:
        out.append(
            Certificate(
                "second_count_violation",
                [(f"nu_inf[{3 * m - 3}] - beta_{3 * m - 4} = {a} - {beta}{'' if exact else '+'} "
                  f"< nu_inf[{3 * m - 2}] - nu_inf[{3 * m - 1}] = {b - c}", True)],
                "at least one solution",
            )
        )
    return out


def _witness(counts: IndexCounts, q: int) -> list:
    if counts.records is None:
        return []
    return [i for i, r in enumerate(counts.records) if r.iota_inf == q]


def existence_certificates(counts: IndexCounts, betti_prev: BettiTable | None, m: int | None = None) -> list[Certificate]:
    """All certificates whose hypotheses hold, plus those that cannot be evaluated for lack of data."""
    m = counts.m if m is None else m
    if m != counts.m:
        raise ValueError("order mismatch")
    out = _minimum_certificates(counts)
    if m >= 2:
        out += _gap_certificates(counts, betti_prev)
        out += _isolated_certificates(counts, betti_prev)
        out += _count_violation_certificates(counts, betti_prev)
    return out


@dataclass
class MorseReport:
    m: int
    chi: int
    nu: list
    nu_inf: list
    inequalities: list | None
    euler: dict | None
    lower_bound: int | None
    certificates: list
    caveats: list

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "chi": self.chi,
            "nu": self.nu,
            "nu_inf": self.nu_inf,
            "inequalities": None if self.inequalities is None else [i.to_dict() for i in self.inequalities],
            "euler": self.euler,
            "lower_bound": self.lower_bound,
            "certificates": [c.to_dict() for c in self.certificates],
            "caveats": self.caveats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def evaluable(self) -> bool:
        return self.inequalities is not None and all(c.status == HOLDS for c in self.certificates)


def build_report(counts: IndexCounts, chi: int, betti_prev: BettiTable | None) -> MorseReport:
    """Assemble every relation that the data allow; gaps become caveats."""
    m = counts.m
    caveats = []
    for r in counts.excluded:
        caveats.append(
            f"degenerate critical point excluded from nu_inf (kernel dimension {r.kernel_dim}, F = {r.F:.12g})"
        )
    if not counts.nu_supplied:
        caveats.append("solution counts nu not supplied; taken as zero, so inequalities test nu_inf alone")
    caveats.append("nondegeneracy of the solutions of the mean field equation is assumed, not verified")
    if counts.records is not None:
        caveats.append("certificates built from critical points found are conditional on search completeness")
    inequalities = euler = bound = None
    if m >= 2:
        try:
            inequalities = check_inequalities(counts, betti_prev)
        except MissingTableError as exc:
            caveats.append(f"Morse inequalities not evaluable: {exc}")
        lhs, rhs, res = euler_identity(counts, chi)
        euler = {"lhs": lhs, "rhs": rhs, "residual": res}
        bound = solution_lower_bound(counts, chi)
    else:
        caveats.append("Morse relations at infinity require m >= 2; only the minimum certificate applies")
    certs = existence_certificates(counts, betti_prev)
    return MorseReport(m, chi, counts.nu, counts.nu_inf, inequalities, euler, bound, certs, caveats)
