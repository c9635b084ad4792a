"""
File formats: versioned CSV tables, JSON reports and sphere maps, fit input.

Every CSV starts with a ``# schema: <name>/<version>`` comment line followed by
a header row. All writes are atomic (temp file in the target directory, then
``os.replace``).
"""

import csv
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from io import StringIO
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import DataParseError
from .fitting import CurveModel, FitDataset
from .pulses import PulseBatch
from .report import to_jsonable

logger = logging.getLogger("io")

SCHEMA_CURVES = "bellpol.curves/1"
SCHEMA_SWEEP = "bellpol.sweep/1"
SCHEMA_PULSES = "bellpol.pulses/1"
SCHEMA_MOMENTS = "bellpol.moments/1"
SCHEMA_DP = "bellpol.dp/1"
SCHEMA_FIT = "bellpol.fit/1"
SCHEMA_FIT_RESIDUALS = "bellpol.fit-residuals/1"
SCHEMA_VALIDATE = "bellpol.validate/1"

PULSE_COLUMNS = ("pulse_index", "I_A", "I_B", "S_n", "S0")


@dataclass(frozen=True)
class SphereMapRecord:
    """One sweep grid point: plate angles, direction, (S2, S1) projection and moment values."""

    chi_H_deg: float
    chi_Q_deg: float
    theta_deg: float
    phi_deg: float
    x: float
    y: float
    nrf: float
    m4_normalized: float

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SphereMapRecord":
        return cls(**{f.name: float(data[f.name]) for f in fields(cls)})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


SPHERE_COLUMNS = tuple(f.name for f in fields(SphereMapRecord))


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temp file and rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Wrote {target}")
    return target


def csv_text(schema: str, columns: Sequence[str], rows) -> str:
    buffer = StringIO()
    buffer.write(f"# schema: {schema}\n")
    data = np.atleast_2d(np.asarray(rows, dtype=float))
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    np.savetxt(buffer, data, delimiter=",", header=",".join(columns), comments="", fmt="%.12g")
    return buffer.getvalue()


def write_csv(path, schema: str, columns: Sequence[str], rows) -> Path:
    return atomic_write_text(path, csv_text(schema, columns, rows))


def read_csv(path) -> Tuple[str, List[str], np.ndarray]:
    """(schema, columns, data) of a file written by write_csv."""
    with open(path) as handle:
        first = handle.readline().strip()
        header = handle.readline().strip()
    if not first.startswith("# schema:"):
        raise DataParseError(f"{path}: missing schema line", [1])
    schema = first.split(":", 1)[1].strip()
    columns = header.split(",")
    data = np.genfromtxt(path, delimiter=",", skip_header=2, ndmin=2)
    return schema, columns, data.reshape(-1, len(columns))


def json_text(payload: Dict[str, Any]) -> str:
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n"


def write_json(path, payload: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json_text(payload))


def read_json(path) -> Dict[str, Any]:
    with open(path) as handle:
        return json.load(handle)


def write_pulse_csv(path, batch: PulseBatch) -> Path:
    return write_csv(path, SCHEMA_PULSES, PULSE_COLUMNS, batch.rows())


def sphere_csv_text(records: Sequence[SphereMapRecord]) -> str:
    rows = [[getattr(r, c) for c in SPHERE_COLUMNS] for r in records]
    return csv_text(SCHEMA_SWEEP, SPHERE_COLUMNS, rows)


def write_sphere_csv(path, records: Sequence[SphereMapRecord]) -> Path:
    return atomic_write_text(path, sphere_csv_text(records))


def sphere_payload(records: Sequence[SphereMapRecord], meta: Dict[str, Any]) -> Dict[str, Any]:
    return {"schema": SCHEMA_SWEEP, "meta": meta, "records": [r.to_dict() for r in records]}


def write_sphere_json(path, records: Sequence[SphereMapRecord], meta: Dict[str, Any]) -> Path:
    return write_json(path, sphere_payload(records, meta))


def parse_sphere_payload(payload: Dict[str, Any]) -> List[SphereMapRecord]:
    if payload.get("schema") != SCHEMA_SWEEP:
        raise DataParseError(f"Unexpected sphere map schema {payload.get('schema')!r}")
    return [SphereMapRecord.from_dict(r) for r in payload["records"]]


def read_sphere_json(path) -> List[SphereMapRecord]:
    return parse_sphere_payload(read_json(path))


def parse_fit_csv(path, model: CurveModel) -> FitDataset:
    """
    Read a fit dataset: columns chi_degrees, nrf and optionally sigma.

    Lines starting with '#' are comments. A sigma column must be filled on
    every row or on none.

    Raises:
        DataParseError: listing the file line of every bad row
    """
    chi, nrf, sigma, row_lines = [], [], [], []
    bad_rows = []
    columns = None
    with open(path, newline="") as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [cell.strip() for cell in row]
            if columns is None:
                columns = [c.lower() for c in cells]
                if columns[:2] != ["chi_degrees", "nrf"] or len(columns) > 3 or (
                    len(columns) == 3 and columns[2] != "sigma"
                ):
                    raise DataParseError(
                        f"{path}: header must be chi_degrees,nrf[,sigma], got {','.join(cells)}", [line_number]
                    )
                continue
            try:
                if len(cells) < 2 or len(cells) > len(columns):
                    raise ValueError("wrong column count")
                chi.append(float(cells[0]))
                nrf.append(float(cells[1]))
                sigma.append(float(cells[2]) if len(cells) > 2 and cells[2] else None)
                row_lines.append(line_number)
            except ValueError:
                bad_rows.append(line_number)

    if columns is None:
        raise DataParseError(f"{path}: no header row")
    if bad_rows:
        raise DataParseError(f"{path}: unparsable rows {bad_rows}", bad_rows)

    given = [s is not None for s in sigma]
    if any(given) and not all(given):
        raise DataParseError(f"{path}: sigma missing on some rows", [n for n, g in zip(row_lines, given) if not g])
    sigma_array = np.array(sigma, dtype=float) if given and all(given) else None
    logger.debug(f"Parsed {len(chi)} fit points from {path}")
    return FitDataset.from_degrees(model, chi, nrf, sigma_array)
