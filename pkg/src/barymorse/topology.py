"""Betti numbers of barycenter spaces over Z/2 and the Euler identity.

Tables are data, not computed. Each line of the bundled file reads
``kind chi m : b0 b1 ... b{3m-1}``. Every table is validated when loaded and
a table that fails a structural check is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

CHI = {"torus": 0, "sphere": 2}


def gen_binomial(n: int, k: int) -> int:
    """Falling-factorial binomial n(n-1)...(n-k+1)/k!, exact for negative n."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    num = 1
    for j in range(k):
        num *= n - j
    return num // math.factorial(k)


def euler_char_barycenter(chi: int, m: int) -> int:
    """Euler characteristic of the order-m barycenter space of a surface with Euler characteristic chi."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m == 0:
        return 0
    return 1 - gen_binomial(m - chi, m)


@dataclass(frozen=True)
class BettiTable:
    kind: str
    chi: int
    m: int
    betti: tuple

    def __getitem__(self, i: int) -> int:
        if i < 0:
            raise IndexError(i)
        return self.betti[i] if i < len(self.betti) else 0

    def euler(self) -> int:
        return sum((-1) ** i * b for i, b in enumerate(self.betti))


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


class MissingTableError(LookupError):
    pass


def validate_betti(table: BettiTable) -> list[Check]:
    m, b = table.m, table.betti
    top = 3 * m - 1
    checks = [
        Check("length", len(b) <= 3 * m, f"{len(b)} entries, top degree allowed {top}"),
        Check("nonnegative", all(x >= 0 for x in b)),
        Check("connected", table[0] == 1, f"b0 = {table[0]}"),
        Check("top_class", table[top] >= 1, f"b{top} = {table[top]}"),
    ]
    want = euler_char_barycenter(table.chi, m)
    checks.append(Check("euler", table.euler() == want, f"alternating sum {table.euler()}, expected {want}"))
    return checks


def is_valid(table: BettiTable) -> bool:
    return all(c.passed for c in validate_betti(table))


def empty_table(kind: str) -> BettiTable:
    """The order-0 barycenter space is empty, so all Betti numbers vanish."""
    return BettiTable(kind, CHI[kind], 0, ())


def parse_tables(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, tail = line.split(":")
            kind, chi, m = head.split()
            table = BettiTable(kind, int(chi), int(m), tuple(int(x) for x in tail.split()))
        except ValueError as exc:
            raise ValueError(f"malformed Betti table at line {lineno}: {raw!r}") from exc
        failed = [c for c in validate_betti(table) if not c.passed]
        if failed:
            names = ", ".join(f"{c.name} ({c.detail})" if c.detail else c.name for c in failed)
            raise ValueError(f"Betti table {kind} m={m} at line {lineno} fails validation: {names}")
        out[(kind, table.m)] = table
    return out


_BUNDLED: dict | None = None


def load_tables(path: str | Path | None = None) -> dict:
    global _BUNDLED
    if path is not None:
        return parse_tables(Path(path).read_text())
    if _BUNDLED is None:
        text = resources.files("barymorse").joinpath("data/betti_tables.txt").read_text()
        _BUNDLED = parse_tables(text)
    return _BUNDLED


def betti_table(kind: str, m: int, path: str | Path | None = None) -> BettiTable:
    if kind not in CHI:
        raise ValueError(f"unknown surface kind {kind!r}")
    if m == 0:
        return empty_table(kind)
    tables = load_tables(path)
    try:
        return tables[(kind, m)]
    except KeyError:
        raise MissingTableError(f"no Betti table for {kind} of order {m}") from None


def known_nonzero(kind: str, m: int, degree: int) -> bool:
    """Nonvanishing facts available without a table: the top class in degree 3m-1."""
    return m >= 1 and degree == 3 * m - 1
