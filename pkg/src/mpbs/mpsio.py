"""MPS / LP writers, an MPS reader and the ``name value`` solution format.

Sections and field order follow fixed-format MPS.  Names longer than eight
characters are written whitespace-separated, which free-format readers accept.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .milp.instance import MilpInstance

_SENSE_CODE = {"<": "L", "=": "E", ">": "G"}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}


class MpsError(ValueError):
    pass


def _num(v: float) -> str:
    if v == 0:
        return "0"
    return repr(float(v))


def _check_name(n: str) -> None:
    if not n or any(ch.isspace() for ch in n):
        raise MpsError(f"name {n!r} is empty or contains whitespace")


def _line(*fields: str) -> str:
    """Fixed-format field placement when names fit, plain separation otherwise."""
    if len(fields) >= 2 and all(len(f) <= 8 for f in fields[:2]) and all(len(f) <= 12 for f in fields[2::2]):
        out = "    " + f"{fields[0]:<8}  {fields[1]:<8}"
        rest = fields[2:]
        if rest:
            out += f"  {rest[0]:>12}"
        if len(rest) >= 3:
            out += f"   {rest[1]:<8}  {rest[2]:>12}"
        return out.rstrip()
    return "    " + "  ".join(fields)


def write_mps(inst: MilpInstance, path: str | Path, name: str = "MPBS") -> int:
    """Write ``inst`` (maximisation) and return the file size in bytes."""
    for n in inst.names:
        _check_name(n)
    for n in inst.row_names:
        _check_name(n)
    lines = [f"NAME          {name}", "OBJSENSE", "    MAX", "ROWS", " N  OBJ"]
    for rn, s in zip(inst.row_names, inst.sense):
        lines.append(f" {_SENSE_CODE[s]}  {rn}")
    lines.append("COLUMNS")
    A = inst.A.tocsc()
    in_int = False
    for j, cname in enumerate(inst.names):
        if inst.binary[j] and not in_int:
            lines.append("    MARKER                 'MARKER'                 'INTORG'")
            in_int = True
        elif not inst.binary[j] and in_int:
            lines.append("    MARKER                 'MARKER'                 'INTEND'")
            in_int = False
        entries = []
        if inst.c[j] != 0:
            entries.append(("OBJ", inst.c[j]))
        lo, hi = A.indptr[j], A.indptr[j + 1]
        for i, v in zip(A.indices[lo:hi], A.data[lo:hi]):
            entries.append((inst.row_names[i], v))
        if not entries:
            entries.append(("OBJ", 0.0))
        for k in range(0, len(entries), 2):
            chunk = entries[k : k + 2]
            fields = [cname]
            for rn, v in chunk:
                fields += [rn, _num(v)]
            lines.append(_line(*fields))
    if in_int:
        lines.append("    MARKER                 'MARKER'                 'INTEND'")
    lines.append("RHS")
    if inst.obj_const:
        lines.append(_line("RHS", "OBJ", _num(-inst.obj_const)))
    for rn, r in zip(inst.row_names, inst.rhs):
        if r != 0:
            lines.append(_line("RHS", rn, _num(r)))
    lines.append("BOUNDS")
    for j, cname in enumerate(inst.names):
        lo, hi = inst.lb[j], inst.ub[j]
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" FR BND       {cname}")
            continue
        if inst.binary[j] and lo == 0 and hi == 1:
            lines.append(f" BV BND       {cname}")
            continue
        if math.isinf(lo):
            lines.append(f" MI BND       {cname}")
        elif lo != 0 or inst.binary[j]:
            lines.append(f" LO BND       {cname}  {_num(lo)}")
        if math.isinf(hi):
            if inst.binary[j]:
                raise MpsError(f"binary {cname} without upper bound")
        else:
            lines.append(f" UP BND       {cname}  {_num(hi)}")
    lines.append("ENDATA")
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    return len(text.encode())


def read_mps(path: str | Path) -> MilpInstance:
    """Parse an MPS file written by :func:`write_mps` or by hand (free or fixed layout)."""
    section = None
    obj_row = None
    sense_max = False
    row_names: list[str] = []
    row_sense: list[str] = []
    row_idx: dict[str, int] = {}
    cols: list[str] = []
    col_idx: dict[str, int] = {}
    is_int: list[bool] = []
    c: dict[int, float] = {}
    entries: list[tuple[int, int, float]] = []
    rhs: dict[int, float] = {}
    obj_const = 0.0
    lb: dict[int, float] = {}
    ub: dict[int, float] = {}
    integer = False

    def col(nm: str) -> int:
        if nm not in col_idx:
            col_idx[nm] = len(cols)
            cols.append(nm)
            is_int.append(integer)
        return col_idx[nm]

    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "OBJSENSE" and len(tok) > 1:
                sense_max = tok[1].upper() in ("MAX", "MAXIMIZE")
            if section == "ENDATA":
                break
            continue
        try:
            if section == "OBJSENSE":
                sense_max = tok[0].upper() in ("MAX", "MAXIMIZE")
            elif section == "ROWS":
                code, nm = tok[0].upper(), tok[1]
                if code == "N":
                    if obj_row is None:
                        obj_row = nm
                    continue
                row_idx[nm] = len(row_names)
                row_names.append(nm)
                row_sense.append(_CODE_SENSE[code])
            elif section == "COLUMNS":
                if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                    integer = tok[2].strip("'").upper() == "INTORG"
                    continue
                j = col(tok[0])
                for k in range(1, len(tok) - 1, 2):
                    rn, v = tok[k], float(tok[k + 1])
                    if rn == obj_row:
                        c[j] = c.get(j, 0.0) + v
                    elif rn in row_idx:
                        entries.append((row_idx[rn], j, v))
                    else:
                        raise MpsError(f"line {lineno}: unknown row {rn}")
            elif section == "RHS":
                pairs = tok[1:] if len(tok) % 2 == 1 else tok
                for k in range(0, len(pairs) - 1, 2):
                    rn, v = pairs[k], float(pairs[k + 1])
                    if rn == obj_row:
                        obj_const = -v
                    elif rn in row_idx:
                        rhs[row_idx[rn]] = v
                    else:
                        raise MpsError(f"line {lineno}: unknown row {rn}")
            elif section == "BOUNDS":
                kind = tok[0].upper()
                nm = tok[2] if len(tok) >= 3 else tok[1]
                if nm not in col_idx:
                    raise MpsError(f"line {lineno}: bound on unknown column {nm}")
                j = col_idx[nm]
                val = float(tok[3]) if len(tok) >= 4 else None
                if kind == "UP":
                    ub[j] = val
                elif kind == "LO":
                    lb[j] = val
                elif kind == "FX":
                    lb[j] = ub[j] = val
                elif kind == "FR":
                    lb[j], ub[j] = -math.inf, math.inf
                elif kind == "MI":
                    lb[j] = -math.inf
                elif kind == "PL":
                    ub[j] = math.inf
                elif kind == "BV":
                    lb[j], ub[j] = 0.0, 1.0
                    is_int[j] = True
                else:
                    raise MpsError(f"line {lineno}: unsupported bound type {kind}")
            elif section in ("RANGES",):
                raise MpsError("RANGES section not supported")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, MpsError):
                raise
            raise MpsError(f"line {lineno}: cannot parse {raw!r}") from exc

    n, m = len(cols), len(row_names)
    if m:
        ii, jj, vv = zip(*entries) if entries else ((), (), ())
        A = sp.csr_matrix((vv, (ii, jj)), shape=(m, n))
    else:
        A = sp.csr_matrix((0, n))
    lbv = np.array([lb.get(j, 0.0) for j in range(n)])
    ubv = np.array([ub.get(j, 1.0 if is_int[j] else math.inf) for j in range(n)])
    binary = np.array([is_int[j] and lbv[j] >= 0 and ubv[j] <= 1 for j in range(n)], dtype=bool)
    if any(is_int[j] and not binary[j] for j in range(n)):
        raise MpsError("general integer columns are not supported")
    cv = np.array([c.get(j, 0.0) for j in range(n)])
    if not sense_max:
        cv, obj_const = -cv, -obj_const
    return MilpInstance(
        names=cols,
        lb=lbv,
        ub=ubv,
        binary=binary,
        implied=np.zeros(n, dtype=bool),
        c=cv,
        A=A,
        sense=np.array(row_sense if m else [], dtype="<U1"),
        rhs=np.array([rhs.get(i, 0.0) for i in range(m)]),
        row_names=row_names,
        row_family=[r.split(":", 1)[0] for r in row_names],
        obj_const=obj_const,
    )


def _lp_name(n: str) -> str:
    return n.replace(":", ".").replace("[", "(").replace("]", ")").replace(",", "_")


def write_lp(inst: MilpInstance, path: str | Path) -> None:
    def expr(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_num(abs(v))} {_lp_name(inst.names[j])}")
        return " ".join(parts) if parts else "0 " + _lp_name(inst.names[0])

    nz = np.flatnonzero(inst.c)
    lines = ["\\ MPBS restoration instance", "Maximize", " obj: " + expr(nz, inst.c[nz]), "Subject To"]
    op = {"<": "<=", "=": "=", ">": ">="}
    A = inst.A.tocsr()
    for i, rn in enumerate(inst.row_names):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        lines.append(f" {_lp_name(rn)}: {expr(A.indices[lo:hi], A.data[lo:hi])} {op[inst.sense[i]]} {_num(inst.rhs[i])}")
    lines.append("Bounds")
    for j, n in enumerate(inst.names):
        lo = "-inf" if math.isinf(inst.lb[j]) else _num(inst.lb[j])
        hi = "+inf" if math.isinf(inst.ub[j]) else _num(inst.ub[j])
        lines.append(f" {lo} <= {_lp_name(n)} <= {hi}")
    bins = [_lp_name(n) for j, n in enumerate(inst.names) if inst.binary[j]]
    if bins:
        lines.append("Binary")
        lines.extend(" " + b for b in bins)
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def write_solution(path: str | Path, names: list[str], x, status: str = "optimal", objective: float | None = None) -> None:
    lines = [f"# status {status}"]
    if objective is not None:
        lines.append(f"# objective {_num(objective)}")
    lines += [f"{n} {_num(float(v))}" for n, v in zip(names, x)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_solution(path: str | Path) -> tuple[dict[str, float], dict[str, str]]:
    """Values and ``# key value`` header fields of a solution file."""
    vals: dict[str, float] = {}
    head: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split(None, 1)
            if len(parts) == 2:
                head[parts[0].lower()] = parts[1].strip()
            continue
        parts = s.split()
        if len(parts) != 2:
            raise MpsError(f"{path}:{lineno}: expected 'name value'")
        try:
            vals[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise MpsError(f"{path}:{lineno}: bad value {parts[1]!r}") from exc
    return vals, head
