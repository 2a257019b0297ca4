"""Standard-form conic programs and a thin Clarabel front end.

A program is ``min 1/2 x'Px + c'x  s.t.  b - Ax in K`` with K a product of
zero, nonnegative and second-order cones, i.e. Clarabel's native form.
Constraints are written as affine expressions ``e = a'x + const`` that must
be zero, nonnegative, or jointly lie in a second-order cone
``e0 >= ||(e1, ..., ek)||``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
from scipy import sparse

from .errors import NumericalFailure


class Lin:
    """Sparse affine expression over program variables."""

    __slots__ = ("idx", "val", "const")

    def __init__(self, idx=(), val=(), const=0.0):
        self.idx = np.asarray(idx, dtype=np.int64).ravel()
        self.val = np.asarray(val, dtype=float).ravel()
        self.const = float(const)

    @classmethod
    def var(cls, i, coef=1.0):
        return cls([i], [coef])

    @classmethod
    def constant(cls, c):
        return cls((), (), c)

    def __add__(self, other):
        if isinstance(other, Lin):
            return Lin(
                np.concatenate([self.idx, other.idx]),
                np.concatenate([self.val, other.val]),
                self.const + other.const,
            )
        return Lin(self.idx, self.val, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Lin(self.idx, -self.val, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        k = float(k)
        return Lin(self.idx, self.val * k, self.const * k)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return float(self.val @ x[self.idx]) + self.const if len(self.idx) else self.const


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sparse.csc_matrix
    b: np.ndarray
    cones: list[tuple[str, int]]
    P: sparse.csc_matrix | None = None
    objective_offset: float = 0.0
    variables: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.b)

    def cone_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for kind, dim in self.cones:
            key = kind if kind != "soc" else f"soc{dim}"
            out[key] = out.get(key, 0) + (dim if kind != "soc" else 1)
        return out

    def dump(self, path) -> None:
        """Write dimensions, cone list and sparse triplets as plain text."""
        A = self.A.tocoo()
        lines = [
            "# conic program, format_version=1",
            f"n_vars {self.n_vars}",
            f"n_rows {self.n_rows}",
            f"objective_offset {self.objective_offset!r}",
            "variables",
        ]
        lines += [f"{name} {start} {size}" for name, start, size in self.variables]
        lines.append("cones")
        lines += [f"{kind} {dim}" for kind, dim in self.cones]
        lines.append("c")
        lines += [f"{i} {v!r}" for i, v in enumerate(self.c) if v != 0.0]
        lines.append("b")
        lines += [f"{i} {v!r}" for i, v in enumerate(self.b) if v != 0.0]
        lines.append("A")
        order = np.lexsort((A.col, A.row))
        lines += [f"{A.row[k]} {A.col[k]} {A.data[k]!r}" for k in order]
        if self.P is not None:
            Pc = sparse.triu(self.P).tocoo()
            lines.append("P")
            lines += [f"{r} {c} {v!r}" for r, c, v in zip(Pc.row, Pc.col, Pc.data)]
        Path(path).write_text("\n".join(lines) + "\n")


class ProgramBuilder:
    def __init__(self):
        self.n = 0
        self.variables: list[tuple[str, int, int]] = []
        self._zero: list[Lin] = []
        self._nonneg: list[Lin] = []
        self._soc: list[list[Lin]] = []
        self._obj: list[Lin] = []

    def var(self, name: str, size: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.variables.append((name, self.n, size))
        self.n += size
        return idx

    def eq(self, e: Lin) -> None:
        self._zero.append(e)

    def ge0(self, e: Lin) -> None:
        self._nonneg.append(e)

    def soc(self, head: Lin, *tail: Lin) -> None:
        self._soc.append([head, *tail])

    def minimize(self, e: Lin) -> None:
        self._obj.append(e)

    def build(self, P=None) -> ConicProgram:
        rows: list[Lin] = list(self._zero) + list(self._nonneg)
        cones: list[tuple[str, int]] = []
        if self._zero:
            cones.append(("zero", len(self._zero)))
        if self._nonneg:
            cones.append(("nonneg", len(self._nonneg)))
        for group in self._soc:
            rows.extend(group)
            cones.append(("soc", len(group)))
        m = len(rows)
        lens = np.array([len(r.idx) for r in rows], dtype=np.int64)
        ri = np.repeat(np.arange(m), lens)
        ci = np.concatenate([r.idx for r in rows]) if m else np.zeros(0, dtype=np.int64)
        vi = np.concatenate([r.val for r in rows]) if m else np.zeros(0)
        # s = e = a'x + const  ->  A = -a, b = const
        A = sparse.csc_matrix((-vi, (ri, ci)), shape=(m, self.n))
        A.sum_duplicates()
        b = np.array([r.const for r in rows])
        c = np.zeros(self.n)
        offset = 0.0
        for e in self._obj:
            np.add.at(c, e.idx, e.val)
            offset += e.const
        return ConicProgram(c, A, b, cones, P, offset, list(self.variables))


@dataclass
class ConicResult:
    status: str
    x: np.ndarray
    objective: float
    iterations: int
    r_prim: float
    r_dual: float
    solve_time: float
    raw_status: str


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "MaxTime": "time-limit",
}


def solve_conic(
    prog: ConicProgram, tol: float = 1e-8, time_limit: float | None = None, max_iter: int = 200
) -> ConicResult:
    """Solve with Clarabel's interior-point method.

    Returns status ``optimal``, ``infeasible`` or ``time-limit``; anything
    else raises ``NumericalFailure``.
    """
    n = prog.n_vars
    if n == 0:
        feasible = all(
            (kind == "zero" and np.allclose(prog.b[i : i + d], 0))
            or (kind == "nonneg" and np.all(prog.b[i : i + d] >= 0))
            or (kind == "soc" and prog.b[i] >= np.linalg.norm(prog.b[i + 1 : i + d]))
            for (kind, d), i in zip(prog.cones, np.cumsum([0] + [d for _, d in prog.cones]))
        )
        return ConicResult(
            "optimal" if feasible else "infeasible",
            np.zeros(0),
            prog.objective_offset,
            0,
            0.0,
            0.0,
            0.0,
            "Trivial",
        )
    cones = []
    for kind, dim in prog.cones:
        if kind == "zero":
            cones.append(clarabel.ZeroConeT(dim))
        elif kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(dim))
        else:
            cones.append(clarabel.SecondOrderConeT(dim))
    P = sparse.csc_matrix((n, n)) if prog.P is None else sparse.triu(prog.P, format="csc")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iter
    if time_limit is not None:
        settings.time_limit = float(time_limit)
    solver = clarabel.DefaultSolver(P, prog.c, prog.A, prog.b, cones, settings)
    sol = solver.solve()
    raw = str(sol.status)
    status = _STATUS.get(raw)
    if status is None:
        raise NumericalFailure(f"conic solver stopped with status {raw}")
    x = np.asarray(sol.x)
    obj = float(0.5 * x @ (prog.P @ x) if prog.P is not None else 0.0) + float(prog.c @ x)
    return ConicResult(
        status,
        x,
        obj + prog.objective_offset,
        int(sol.iterations),
        float(sol.r_prim),
        float(sol.r_dual),
        float(sol.solve_time),
        raw,
    )
