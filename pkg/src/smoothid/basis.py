"""Multivariate monomial dictionaries and design-matrix evaluation."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = ["ExponentTable", "DesignMatrix", "build_table", "evaluate", "monomial_label"]


@dataclass(frozen=True)
class ExponentTable:
    """Monomial exponent vectors of total degree <= d, graded-lex ordered.

    ``exps`` is a tuple of integer tuples (i1, ..., in); the constant
    monomial comes first and p = C(n+d, n).
    """

    exps: tuple
    n: int
    degree: int

    @property
    def p(self) -> int:
        return len(self.exps)

    def index_of(self, exponents) -> int:
        """Column index of one monomial; raises KeyError when absent."""
        key = tuple(int(e) for e in exponents)
        try:
            return self.exps.index(key)
        except ValueError:
            raise KeyError(f"monomial {key} not in table") from None

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "degree": self.degree, "exps": [list(e) for e in self.exps]})

    @classmethod
    def from_json(cls, text: str) -> "ExponentTable":
        d = json.loads(text)
        return cls(tuple(tuple(e) for e in d["exps"]), d["n"], d["degree"])


@dataclass
class DesignMatrix:
    """Dictionary evaluated on sampled states: phi[k][i] = prod_j X[j][k]^e_ij."""

    phi: np.ndarray
    table: ExponentTable
    column_norms: np.ndarray | None = None


def build_table(n: int, d: int) -> ExponentTable:
    """All exponent vectors with total degree <= d over n variables."""
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    exps = [e for e in itertools.product(range(d + 1), repeat=n) if sum(e) <= d]
    # degree-major, then variable-1 first within each degree
    exps.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    table = ExponentTable(tuple(exps), n, d)
    assert table.p == comb(n + d, n)
    return table


def evaluate(table: ExponentTable, X) -> DesignMatrix:
    """Evaluate the dictionary on states ``X`` (n rows, m samples)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != table.n:
        raise ValueError(f"X must be ({table.n}, m)")
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    m = X.shape[1]
    # powers[j][k] = X[j]**k, precomputed once per variable
    powers = [[np.ones(m)] for _ in range(table.n)]
    for j in range(table.n):
        for _ in range(table.degree):
            powers[j].append(powers[j][-1] * X[j])
    phi = np.empty((m, table.p))
    for i, e in enumerate(table.exps):
        col = np.ones(m)
        for j, k in enumerate(e):
            if k:
                col = col * powers[j][k]
        phi[:, i] = col
    return DesignMatrix(phi, table)


def monomial_label(exponents, names=None) -> str:
    """Human-readable monomial, e.g. (1,0,2) -> ``x1*x3^2``."""
    parts = []
    for j, k in enumerate(exponents):
        if k == 0:
            continue
        name = names[j] if names else f"x{j + 1}"
        parts.append(name if k == 1 else f"{name}^{k}")
    return "*".join(parts) if parts else "1"
