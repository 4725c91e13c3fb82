"""Feasible reflection-coefficient sets and element-wise projection onto them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import TableValidationError

DISCRETE = "discrete"
UNIT_CIRCLE = "unit_circle"

# -1 dB amplitude of the p-i-n diode prototypes.
PIN_AMPLITUDE = 10 ** (-1 / 20)

_PASSIVITY_SLACK = 1e-9
_DEDUP_DECIMALS = 12


def _canonical_order(values: np.ndarray) -> np.ndarray:
    # -0.0 imaginary parts would put -g at angle -pi instead of pi
    values = np.where(values.imag == 0, values.real + 0j, values)
    keys = np.round(values, _DEDUP_DECIMALS)
    _, idx = np.unique(keys, return_index=True)
    values = values[np.sort(idx)]
    order = np.lexsort((np.abs(values), np.angle(values)))
    return values[order]


@dataclass(frozen=True)
class LookupTable:
    """A named set of reflection coefficients a single RIS element can realise.

    Discrete tables are stored deduplicated and sorted by phase, then
    magnitude; projection ties resolve to the lowest index in that order.
    ``kind == "unit_circle"`` stands for the continuous unit-modulus set and
    carries no explicit values.
    """

    name: str
    values: np.ndarray
    kind: str = DISCRETE

    def __post_init__(self):
        if self.kind not in (DISCRETE, UNIT_CIRCLE):
            raise TableValidationError(f"unknown table kind {self.kind!r}")
        values = np.atleast_1d(np.asarray(self.values, dtype=complex))
        if self.kind == DISCRETE:
            if values.size == 0:
                raise TableValidationError(f"table {self.name!r} is empty")
            if not np.all(np.isfinite(values)):
                raise TableValidationError(f"table {self.name!r} has non-finite values")
            bad = np.flatnonzero(np.abs(values) > 1 + _PASSIVITY_SLACK)
            if bad.size:
                raise TableValidationError(
                    f"table {self.name!r}: value {values[bad[0]]} at index {bad[0]} "
                    "has magnitude > 1 (passive RIS)"
                )
            values = _canonical_order(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    def __len__(self):
        return len(self.values)

    def contains(self, omega) -> np.ndarray:
        """Element-wise membership test (exact for discrete tables)."""
        omega = np.asarray(omega, dtype=complex)
        if self.kind == UNIT_CIRCLE:
            return np.abs(np.abs(omega) - 1.0) <= 1e-12
        return np.isin(omega, self.values)

    def __eq__(self, other):
        if not isinstance(other, LookupTable):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.values.shape == other.values.shape
            and bool(np.all(self.values == other.values))
        )

    def __hash__(self):
        return hash((self.name, self.kind, self.values.tobytes()))


@dataclass(frozen=True)
class RisProfile:
    """An RIS configuration ``omega`` together with the table it satisfies."""

    omega: np.ndarray
    table_ref: str

    def __len__(self):
        return len(self.omega)


UNCONSTRAINED = LookupTable("unconstrained", np.array([], dtype=complex), UNIT_CIRCLE)


def _table_v() -> LookupTable:
    text = resources.files("beamlab.data").joinpath("table_v.csv").read_text()
    return _parse_table(io.StringIO(text), "V", "table_v.csv")


def builtin_tables() -> list[LookupTable]:
    g = PIN_AMPLITUDE
    return [
        UNCONSTRAINED,
        LookupTable("K1", np.array([g, -g])),
        LookupTable("K2", np.array([g, 1j * g, -g, -1j * g])),
        _table_v(),
    ]


def get_table(name: str) -> LookupTable:
    for table in builtin_tables():
        if table.name.lower() == name.lower():
            return table
    raise KeyError(f"unknown table {name!r}; builtin tables are unconstrained, K1, K2, V")


def _parse_table(stream, name: str, source: str) -> LookupTable:
    rows = [
        row
        for row in csv.reader(line for line in stream if not line.lstrip().startswith("#"))
        if row and any(cell.strip() for cell in row)
    ]
    if not rows:
        raise TableValidationError(f"{source}: no header or data rows")
    header = [h.strip().lower() for h in rows[0]]
    if header == ["re", "im"]:
        polar = False
    elif header == ["mag_db", "phase_deg"]:
        polar = True
    else:
        raise TableValidationError(f"{source}: header must be 're,im' or 'mag_db,phase_deg'")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            a, b = (float(cell) for cell in row)
        except ValueError as exc:
            raise TableValidationError(f"{source}: data row {lineno - 1} is malformed: {row}") from exc
        v = 10 ** (a / 20) * np.exp(1j * np.deg2rad(b)) if polar else complex(a, b)
        if abs(v) > 1 + _PASSIVITY_SLACK:
            raise TableValidationError(
                f"{source}: data row {lineno - 1} has magnitude {abs(v):.4f} > 1 (passive RIS)"
            )
        values.append(v)
    if not values:
        raise TableValidationError(f"{source}: table has no data rows")
    return LookupTable(name, np.array(values))


def load_table_csv(path, name: str | None = None) -> LookupTable:
    path = Path(path)
    with open(path, newline="") as fh:
        return _parse_table(fh, name or path.stem, str(path))


def save_table_csv(table: LookupTable, path) -> None:
    if not table.is_discrete:
        raise TableValidationError("only discrete tables can be exported")
    with open(path, "w", newline="") as fh:
        fh.write(f"# {table.name}\nre,im\n")
        for v in table.values:
            fh.write(f"{float(v.real)!r},{float(v.imag)!r}\n")


def project(omega, table: LookupTable) -> np.ndarray:
    """Nearest-member projection of every entry of ``omega`` (any shape)."""
    omega = np.asarray(omega, dtype=complex)
    if table.kind == UNIT_CIRCLE:
        mag = np.abs(omega)
        # zero has no phase: take phase 0, the first point in canonical order
        return np.where(mag > 0, omega / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    dist = np.abs(omega[..., None] - table.values) ** 2
    return table.values[np.argmin(dist, axis=-1)]


def project_value(v: complex, table: LookupTable) -> complex:
    return complex(project(np.array([v]), table)[0])


def project_profile(omega, table: LookupTable) -> RisProfile:
    return RisProfile(project(omega, table), table.name)
