"""Primal simplex for ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0``.

The slack basis is feasible from the start, so no first phase is needed.
Rows are stored sparsely (column -> coefficient). The entering column is the
one with the largest reduced cost; after a degenerate pivot the choice falls
back to Bland's rule until the objective moves again, so the method cannot
cycle (a cycle would consist of degenerate pivots only). Arithmetic is exact until the pivot count
passes ``exact_pivot_limit``; after that the tableau is converted to floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Q, parse_money

_EPS = 1e-12


class Unbounded(ArithmeticError):
    pass


@dataclass
class LPResult:
    value: object  # exact rational, or float after the fallback
    x: list
    pivots: int
    exact: bool


def _num(v, exact: bool):
    if not exact:
        return float(v)
    if isinstance(v, float):
        return Q(v)
    return parse_money(v)


def solve(c: Sequence, rows: Sequence[Mapping[int, object]], b: Sequence, *,
          exact_pivot_limit: int = 10_000, max_pivots: int = 1_000_000) -> LPResult:
    """Maximize ``c . x`` over ``rows[i] . x <= b[i]``, ``x >= 0``.

    ``rows`` are sparse: each maps a variable index to its coefficient.
    """
    n = len(c)
    m = len(rows)
    exact = True
    # tableau rows: dict col -> value, columns n..n+m-1 are slacks
    T: list[dict[int, object]] = []
    rhs: list = []
    for i, (row, bi) in enumerate(zip(rows, b)):
        bi = _num(bi, True)
        if bi < 0:
            raise ValueError("right-hand sides must be non-negative")
        r = {j: _num(a, True) for j, a in row.items() if a}
        r[n + i] = Q(1)
        T.append(r)
        rhs.append(bi)
    # reduced costs for a max problem: entering columns have positive cost
    cost = {j: _num(cj, True) for j, cj in enumerate(c) if cj}
    basis = [n + i for i in range(m)]
    # column -> rows where it is nonzero, kept in sync to find pivot-column entries fast
    col_rows: dict[int, set[int]] = {}
    for i, r in enumerate(T):
        for j in r:
            col_rows.setdefault(j, set()).add(i)
    pivots = 0
    bland = False

    while True:
        tol = 0 if exact else _EPS
        enter = None
        if bland:
            for j in sorted(cost):
                if cost[j] > tol:
                    enter = j
                    break
        else:
            for j, cj in cost.items():
                if cj > tol and (enter is None or cj > cost[enter] or (cj == cost[enter] and j < enter)):
                    enter = j
        if enter is None:
            break
        leave = None
        best = None
        for i in col_rows.get(enter, ()):
            a = T[i][enter]
            if a > tol:
                ratio = rhs[i] / a
                if (best is None or ratio < best - (0 if exact else _EPS)
                        or (abs(ratio - best) <= (0 if exact else _EPS) and basis[i] < basis[leave])):
                    best, leave = ratio, i
        if leave is None:
            raise Unbounded("objective is unbounded")
        # a degenerate step hands control to Bland's rule until progress resumes
        bland = best <= (0 if exact else _EPS)
        # pivot
        prow = T[leave]
        piv = prow[enter]
        for j in prow:
            prow[j] = prow[j] / piv
        rhs[leave] = rhs[leave] / piv
        for i in list(col_rows.get(enter, ())):
            if i == leave:
                continue
            row = T[i]
            f = row.get(enter)
            if not f:
                continue
            for j, a in prow.items():
                nv = row.get(j, 0) - f * a
                if (nv == 0) if exact else (abs(nv) <= _EPS):
                    if j in row:
                        del row[j]
                        col_rows[j].discard(i)
                else:
                    if j not in row:
                        col_rows.setdefault(j, set()).add(i)
                    row[j] = nv
            rhs[i] = rhs[i] - f * rhs[leave]
            if not exact and rhs[i] < 0 and rhs[i] > -_EPS:
                rhs[i] = 0.0
        f = cost.get(enter)
        if f:
            for j, a in prow.items():
                nv = cost.get(j, 0) - f * a
                if (nv == 0) if exact else (abs(nv) <= _EPS):
                    cost.pop(j, None)
                else:
                    cost[j] = nv
        basis[leave] = enter
        pivots += 1
        if exact and pivots >= exact_pivot_limit:
            exact = False
            T = [{j: float(a) for j, a in r.items()} for r in T]
            rhs = [float(v) for v in rhs]
            cost = {j: float(a) for j, a in cost.items()}
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit exceeded")

    x = [Q(0) if exact else 0.0] * n
    for i, j in enumerate(basis):
        if j < n:
            x[j] = rhs[i]
    value = sum((cj * xj for cj, xj in zip((_num(v, exact) for v in c), x)), Q(0) if exact else 0.0)
    return LPResult(value, x, pivots, exact)
