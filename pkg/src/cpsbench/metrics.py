"""Primary (control quality, actuation, energy proxy) and secondary (network) metrics.

All functions take a trace table: the column dict produced by
:func:`cpsbench.trace.read_csv` or :meth:`Trace.to_table`. Computing from
the table rather than from in-memory floats keeps a report recomputed from a
trace file identical to the one produced during the run.

Energy consumption is reported through the radio duty cycle; there is no
battery model.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from .exceptions import InvalidArgumentError
from .network import RoundSchedule, radio_duty_cycle

STATE_COLUMNS = ("theta_rad", "pos_m", "thetadot_rad_s", "posdot_m_s")
THREE_DEG = math.radians(3.0)


@dataclass(frozen=True)
class MetricsReport:
    quadratic_cost: float = 0.0
    actuation_intensity: float = 0.0
    max_abs_angle: float = 0.0
    angle_within_3deg_fraction: float = 0.0
    max_abs_pos: float = 0.0
    sync_rms_error: Optional[float] = None
    sync_rms_error_final: Optional[float] = None
    drop_rate_state: float = 0.0
    drop_rate_control: float = 0.0
    loop_latency: float = 0.0
    radio_duty_cycle: float = 0.0
    faulted: bool = False
    empty: bool = True
    rounds: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def _states(table) -> np.ndarray:
    return np.column_stack([table[c] for c in STATE_COLUMNS]) if len(table["t_s"]) else np.zeros((0, 4))


def quadratic_cost(table, Q, R, x_eq=np.zeros(4), u_eq: float = 0.0) -> float:
    """Per-row mean of ``dx' Q dx + R du^2``; 0 for an empty trace."""
    dx = _states(table) - np.asarray(x_eq, dtype=float)
    if dx.shape[0] == 0:
        return 0.0
    du = table["u_V"] - u_eq
    Q = np.asarray(Q, dtype=float)
    state_term = np.einsum("ij,jk,ik->i", dx, Q, dx)
    return float(np.mean(state_term + float(R) * du * du))


def actuation_intensity(table, sample_time: float) -> float:
    u = table["u_V"]
    return float(np.sum(u * u) * sample_time)


def network_stats(table, schedule: Optional[RoundSchedule], loop_latency: float,
                  hops_active: int) -> Dict[str, float]:
    """Drop rates (means of the loss-flag columns), loop latency and duty cycle."""
    n = len(table["t_s"])
    return {
        "drop_rate_state": float(np.mean(table["gamma_state"])) if n else 0.0,
        "drop_rate_control": float(np.mean(table["gamma_control"])) if n else 0.0,
        "loop_latency": float(loop_latency),
        "radio_duty_cycle": radio_duty_cycle(schedule, hops_active) if schedule else 0.0,
    }


def _positions_by_round(table, t_start=None):
    agents = np.unique(table["agent_id"])
    mask = np.ones(len(table["t_s"]), dtype=bool) if t_start is None else table["t_s"] >= t_start
    times = np.unique(table["t_s"][mask])
    pos = np.full((len(times), len(agents)), np.nan)
    t_idx = np.searchsorted(times, table["t_s"][mask])
    a_idx = np.searchsorted(agents, table["agent_id"][mask])
    pos[t_idx, a_idx] = table["pos_m"][mask]
    return agents, pos


def sync_metric(table, t_start: Optional[float] = None) -> float:
    """RMS of the pairwise cart position errors over rounds and agent pairs."""
    agents, pos = _positions_by_round(table, t_start)
    if len(agents) < 2:
        raise InvalidArgumentError("synchronization error needs at least two agents")
    if pos.shape[0] == 0:
        return 0.0
    pairs = list(itertools.combinations(range(len(agents)), 2))
    sq = np.column_stack([(pos[:, i] - pos[:, j]) ** 2 for i, j in pairs])
    return float(math.sqrt(np.mean(np.mean(sq, axis=1))))


def compute_metrics(table, *, Q, R, x_eq, sample_time, schedule, loop_latency,
                    hops_active, transient=2.0, final_window=10.0) -> MetricsReport:
    n = len(table["t_s"])
    faulted = bool(np.any(table["fault"] != "")) if n else False
    if n == 0:
        return MetricsReport(faulted=faulted, empty=True, rounds=0,
                             **network_stats(table, schedule, loop_latency, hops_active))
    dtheta = np.abs(table["theta_rad"] - x_eq[0])
    settled = table["t_s"] >= transient
    agents = np.unique(table["agent_id"])
    sync = sync_final = None
    if len(agents) >= 2:
        sync = sync_metric(table)
        t_end = float(np.max(table["t_s"]))
        sync_final = sync_metric(table, t_end - final_window + 0.5 * sample_time)
    return MetricsReport(
        quadratic_cost=quadratic_cost(table, Q, R, x_eq),
        actuation_intensity=actuation_intensity(table, sample_time),
        max_abs_angle=float(np.max(dtheta)),
        angle_within_3deg_fraction=float(np.mean(dtheta[settled] <= THREE_DEG)) if settled.any() else 0.0,
        max_abs_pos=float(np.max(np.abs(table["pos_m"]))),
        sync_rms_error=sync,
        sync_rms_error_final=sync_final,
        faulted=faulted,
        empty=False,
        rounds=len(np.unique(table["t_s"])),
        **network_stats(table, schedule, loop_latency, hops_active),
    )
