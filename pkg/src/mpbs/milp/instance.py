"""Canonical mixed-integer linear program (maximisation)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SENSES = ("<", "=", ">")


def var_name(key: tuple) -> str:
    """(symbol, element, phase, step) -> ``sym:elem:phase:step`` (empty parts kept)."""
    return ":".join("" if k is None else str(k) for k in key)


@dataclass(eq=False)
class MilpInstance:
    names: list[str]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray  # bool per column
    implied: np.ndarray  # bool: continuous but integral at any feasible binary point
    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray  # '<' '=' '>' per row
    rhs: np.ndarray
    row_names: list[str]
    row_family: list[str]
    big_m: dict[str, float] = field(default_factory=dict)
    obj_const: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_binary(self) -> int:
        return int(self.binary.sum())

    def col(self, key: tuple | str) -> int:
        return self.index[key if isinstance(key, str) else var_name(key)]

    def has(self, key: tuple | str) -> bool:
        return (key if isinstance(key, str) else var_name(key)) in self.index

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.obj_const

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Signed row violation (positive = violated)."""
        ax = self.A @ x
        out = np.zeros_like(ax)
        le = self.sense == "<"
        ge = self.sense == ">"
        eq = self.sense == "="
        out[le] = ax[le] - self.rhs[le]
        out[ge] = self.rhs[ge] - ax[ge]
        out[eq] = np.abs(ax[eq] - self.rhs[eq])
        return out

    def max_violation(self, x: np.ndarray) -> float:
        r = self.residuals(x)
        bnd = np.maximum(self.lb - x, x - self.ub)
        return float(max(r.max(initial=0.0), bnd.max(initial=0.0)))

    def family_counts(self) -> dict[str, int]:
        return dict(Counter(self.row_family))

    def census(self) -> dict[str, int]:
        return {
            "variables": self.n_vars,
            "binaries": self.n_binary,
            "rows": self.n_rows,
            "nonzeros": int(self.A.nnz),
            **{f"rows[{k}]": v for k, v in sorted(self.family_counts().items())},
        }

    def rows_of(self, family: str) -> list[int]:
        return [i for i, f in enumerate(self.row_family) if f == family]

    def row_dict(self, i: int) -> dict[str, float]:
        r = self.A.getrow(i)
        return {self.names[j]: float(v) for j, v in zip(r.indices, r.data)}

    def check(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate variable name")
        if not np.all(np.isfinite(self.A.data)) or not np.all(np.isfinite(self.rhs)) or not np.all(np.isfinite(self.c)):
            raise ValueError("non-finite coefficient")
        if np.any(self.binary & ((self.lb < 0) | (self.ub > 1))):
            raise ValueError("binary column with bounds outside [0, 1]")
        if np.any(self.lb > self.ub + 1e-12):
            bad = int(np.flatnonzero(self.lb > self.ub + 1e-12)[0])
            raise ValueError(f"empty bounds on {self.names[bad]}")
        for k, v in self.big_m.items():
            if not math.isfinite(v):
                raise ValueError(f"big-M of {k} is not finite")


class InstanceBuilder:
    """Accumulates columns and rows in a deterministic order."""

    def __init__(self):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._bin: list[bool] = []
        self._implied: list[bool] = []
        self._c: list[float] = []
        self._rows_i: list[int] = []
        self._rows_j: list[int] = []
        self._rows_v: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self._family: list[str] = []
        self.big_m: dict[str, float] = {}
        self.obj_const = 0.0

    def var(self, key: tuple, lb: float = 0.0, ub: float = math.inf, binary: bool = False, implied: bool = False) -> int:
        name = var_name(key)
        if name in self._index:
            raise ValueError(f"variable {name} declared twice")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self._index[name] = len(self._names)
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._bin.append(bool(binary))
        self._implied.append(bool(implied))
        self._c.append(0.0)
        return self._index[name]

    def idx(self, key: tuple) -> int:
        return self._index[var_name(key)]

    def has(self, key: tuple) -> bool:
        return var_name(key) in self._index

    def tighten(self, key: tuple, lb: float | None = None, ub: float | None = None) -> None:
        j = self.idx(key)
        if lb is not None:
            self._lb[j] = max(self._lb[j], lb)
        if ub is not None:
            self._ub[j] = min(self._ub[j], ub)

    def obj(self, key: tuple, coef: float) -> None:
        self._c[self.idx(key)] += coef

    def row(self, family: str, name: str, terms: dict[tuple, float] | list[tuple[tuple, float]], sense: str, rhs: float) -> int:
        if sense not in SENSES:
            raise ValueError(sense)
        items = terms.items() if isinstance(terms, dict) else terms
        acc: dict[int, float] = {}
        for key, v in items:
            j = self.idx(key)
            acc[j] = acc.get(j, 0.0) + float(v)
        r = len(self._sense)
        for j in sorted(acc):
            if acc[j] != 0.0:
                self._rows_i.append(r)
                self._rows_j.append(j)
                self._rows_v.append(acc[j])
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(f"{family}:{name}")
        self._family.append(family)
        return r

    def build(self, meta: dict | None = None) -> MilpInstance:
        n = len(self._names)
        m = len(self._sense)
        A = sp.csr_matrix((self._rows_v, (self._rows_i, self._rows_j)), shape=(m, n))
        inst = MilpInstance(
            names=list(self._names),
            lb=np.array(self._lb),
            ub=np.array(self._ub),
            binary=np.array(self._bin, dtype=bool),
            implied=np.array(self._implied, dtype=bool),
            c=np.array(self._c),
            A=A,
            sense=np.array(self._sense),
            rhs=np.array(self._rhs),
            row_names=list(self._row_names),
            row_family=list(self._family),
            big_m=dict(self.big_m),
            obj_const=self.obj_const,
            meta=dict(meta or {}),
        )
        inst.check()
        return inst
