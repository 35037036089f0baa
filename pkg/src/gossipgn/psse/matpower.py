"""Reader and writer for the MATPOWER case subset this package understands.

Supported content: a `function mpc = <name>` header, `mpc.baseMVA`, and the
`mpc.bus`, `mpc.gen`, `mpc.branch` matrices with MATLAB `%` comments. Rows
are whitespace-separated numbers, optionally ending in `;`. Anything the
electrical model cannot represent (phase-shifting transformers) is rejected
by the grid builder, not silently dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import CaseParseError

BUS_COLS = 13
GEN_COLS = 10
BRANCH_COLS = 11

# column offsets (MATPOWER v2 layout)
BUS_I, BUS_TYPE, BUS_PD, BUS_QD, BUS_GS, BUS_BS = 0, 1, 2, 3, 4, 5
GEN_BUS, GEN_PG, GEN_VG, GEN_STATUS = 0, 1, 5, 7
BR_F, BR_T, BR_R, BR_X, BR_B, BR_TAP, BR_SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10


@dataclass(frozen=True)
class MatpowerCase:
    """Raw numeric tables of one case, still in MATPOWER units."""

    name: str
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray

    def __post_init__(self):
        for label, table, min_cols in (
            ("bus", self.bus, BUS_COLS),
            ("gen", self.gen, GEN_COLS),
            ("branch", self.branch, BRANCH_COLS),
        ):
            if table.ndim != 2 or table.shape[1] < min_cols:
                raise CaseParseError(
                    f"{label} table needs at least {min_cols} columns, got shape {table.shape}"
                )
        if self.base_mva <= 0:
            raise CaseParseError("baseMVA must be positive")


_HEADER_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE+.\-]+)\s*;?")
_TABLE_RE = re.compile(r"mpc\.(bus|gen|branch)\s*=\s*\[")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def parse_matpower_text(text: str) -> MatpowerCase:
    name = "case"
    base_mva = None
    tables: dict[str, list[list[float]]] = {}
    current: str | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is not None:
            closed = False
            body = line
            if "]" in line:
                body = line[: line.index("]")]
                closed = True
            body = body.strip().rstrip(";").strip()
            if body:
                parts = body.replace(",", " ").split()
                try:
                    row = [float(p) for p in parts]
                except ValueError as exc:
                    raise CaseParseError(f"bad number in {current} row: {exc}", line_no)
                rows = tables[current]
                if rows and len(rows[0]) != len(row):
                    raise CaseParseError(
                        f"{current} row has {len(row)} columns, expected {len(rows[0])}",
                        line_no,
                    )
                rows.append(row)
            if closed:
                current = None
            continue

        m = _HEADER_RE.search(line)
        if m:
            name = m.group(1)
            continue
        m = _SCALAR_RE.search(line)
        if m:
            base_mva = float(m.group(1))
            continue
        m = _TABLE_RE.search(line)
        if m:
            key = m.group(1)
            if key in tables:
                raise CaseParseError(f"duplicate mpc.{key} table", line_no)
            tables[key] = []
            current = key
            # rows may start on the same line after the bracket
            rest = line[m.end() :]
            if rest.strip():
                raise CaseParseError("table rows must start on the following line", line_no)
            continue
        if line.startswith("mpc."):
            # tolerated extras (version string, gencost, names): ignored
            continue

    if current is not None:
        raise CaseParseError(f"unterminated mpc.{current} table (missing ])")
    if base_mva is None:
        raise CaseParseError("missing mpc.baseMVA")
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseParseError(f"missing mpc.{key} table")
        if not tables[key]:
            if key != "branch":
                raise CaseParseError(f"empty mpc.{key} table")

    def as_array(rows: list[list[float]], width_hint: int) -> np.ndarray:
        if not rows:
            return np.zeros((0, width_hint))
        return np.asarray(rows, dtype=float)

    return MatpowerCase(
        name=name,
        base_mva=base_mva,
        bus=as_array(tables["bus"], BUS_COLS),
        gen=as_array(tables["gen"], GEN_COLS),
        branch=as_array(tables["branch"], BRANCH_COLS),
    )


def _fmt(x: float) -> str:
    # repr round-trips exactly, keeping serialize -> parse lossless
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def serialize_case(case: MatpowerCase) -> str:
    out = [f"function mpc = {case.name}", "mpc.version = '2';", ""]
    out.append(f"mpc.baseMVA = {_fmt(case.base_mva)};")
    for key in ("bus", "gen", "branch"):
        table = getattr(case, key)
        out.append("")
        out.append(f"mpc.{key} = [")
        for row in table:
            out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
        out.append("];")
    out.append("")
    return "\n".join(out)


def scale_loads(case: MatpowerCase, factor: float) -> MatpowerCase:
    """Uniformly scale all bus active and reactive loads."""
    if factor < 0:
        raise CaseParseError("load scale factor must be nonnegative")
    bus = case.bus.copy()
    bus[:, BUS_PD] *= factor
    bus[:, BUS_QD] *= factor
    return replace(case, bus=bus)


def load_case(source: str | Path) -> MatpowerCase:
    """Load a case from a file path, or by packaged name ('case30', 'case2')."""
    path = Path(source)
    if not path.suffix and not path.exists():
        candidate = resources.files("gossipgn.psse").joinpath(f"data/{source}.m")
        if candidate.is_file():
            return parse_matpower_text(candidate.read_text())
        raise CaseParseError(f"unknown case {source!r} (no file and no packaged case)")
    if not path.exists():
        raise CaseParseError(f"case file not found: {path}")
    return parse_matpower_text(path.read_text())
