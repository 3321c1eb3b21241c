"""Run traces and their CSV serialization.

One row per round and agent, ordered by time then agent id. Floats are
written with 9 significant digits, except the two measurement columns,
which use shortest round-trip formatting so a recorded trace can be
replayed bit-exactly.
"""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .exceptions import PlaybackError

COLUMNS = (
    "t_s", "agent_id", "theta_rad", "pos_m", "theta_est_rad", "pos_est_m",
    "thetadot_est", "posdot_est", "u_V", "gamma_state", "gamma_control",
    "thetadot_rad_s", "posdot_m_s", "theta_meas_rad", "pos_meas_m",
    "u_src_round", "fault",
)
_INT_COLUMNS = {"agent_id", "gamma_state", "gamma_control", "u_src_round"}
_EXACT_COLUMNS = {"theta_meas_rad", "pos_meas_m"}


@dataclass(frozen=True)
class TraceRow:
    t_s: float
    agent_id: int
    theta_rad: float
    pos_m: float
    theta_est_rad: float
    pos_est_m: float
    thetadot_est: float
    posdot_est: float
    u_V: float
    gamma_state: int
    gamma_control: int
    thetadot_rad_s: float
    posdot_m_s: float
    theta_meas_rad: float
    pos_meas_m: float
    u_src_round: int
    fault: str = ""


@dataclass(frozen=True)
class Fault:
    t_s: float
    agent_id: int
    kind: str


@dataclass
class Trace:
    rows: List[TraceRow] = field(default_factory=list)
    faults: List[Fault] = field(default_factory=list)
    config: object = None
    seed: Optional[int] = None

    @property
    def faulted(self) -> bool:
        return bool(self.faults)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow(_format_row(row))
        return buf.getvalue()

    def write_csv(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_table(self) -> Dict[str, np.ndarray]:
        """Column arrays holding exactly the values a CSV reader would see."""
        return read_csv_text(self.to_csv())


def _format_value(name, value):
    if name in _INT_COLUMNS:
        return str(int(value))
    if name == "fault":
        return value
    if name in _EXACT_COLUMNS:
        return repr(float(value))
    return f"{value:.9g}"


def _format_row(row: TraceRow):
    return [_format_value(name, value) for name, value in zip(COLUMNS, astuple(row))]


def read_csv_text(text: str) -> Dict[str, np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise PlaybackError("trace file is empty") from None
    if tuple(header) != COLUMNS:
        raise PlaybackError(f"unexpected trace columns {header!r}")
    cols: Dict[str, list] = {name: [] for name in COLUMNS}
    for lineno, record in enumerate(reader, start=2):
        if len(record) != len(COLUMNS):
            raise PlaybackError(f"line {lineno}: expected {len(COLUMNS)} fields")
        try:
            for name, text_value in zip(COLUMNS, record):
                if name == "fault":
                    cols[name].append(text_value)
                elif name in _INT_COLUMNS:
                    cols[name].append(int(text_value))
                else:
                    cols[name].append(float(text_value))
        except ValueError as exc:
            raise PlaybackError(f"line {lineno}: {exc}") from None
    table = {}
    for name in COLUMNS:
        if name == "fault":
            table[name] = np.array(cols[name], dtype=object)
        elif name in _INT_COLUMNS:
            table[name] = np.array(cols[name], dtype=np.int64)
        else:
            table[name] = np.array(cols[name], dtype=float)
    return table


def read_csv(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PlaybackError(f"cannot read {path}: {exc}") from None
    return read_csv_text(text)
