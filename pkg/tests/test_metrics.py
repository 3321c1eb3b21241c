import json
import math

import numpy as np
import pytest

from cpsbench.exceptions import InvalidArgumentError
from cpsbench.metrics import (MetricsReport, actuation_intensity, compute_metrics, network_stats,
                              quadratic_cost, sync_metric)
from cpsbench.network import RoundSchedule, Slot
from cpsbench.trace import COLUMNS

Q = np.diag([5.0, 10.0, 0.1, 0.5])
TS = 0.04


def table(rounds, agents=1, **cols):
    """Trace table with ``rounds * agents`` rows; unspecified columns are zero."""
    n = rounds * agents
    out = {}
    for name in COLUMNS:
        if name == "fault":
            out[name] = np.array([""] * n, dtype=object)
        elif name == "agent_id":
            out[name] = np.tile(np.arange(agents), rounds)
        elif name == "t_s":
            out[name] = np.repeat(np.arange(rounds) * TS, agents)
        elif name in ("gamma_state", "gamma_control", "u_src_round"):
            out[name] = np.zeros(n, dtype=np.int64)
        else:
            out[name] = np.zeros(n)
    for name, values in cols.items():
        out[name] = np.broadcast_to(np.asarray(values), (n,)).copy()
    return out


def test_cost_zero_deviation():
    assert quadratic_cost(table(10), Q, 1.0) == 0.0


def test_cost_single_round_example():
    assert quadratic_cost(table(1, theta_rad=0.1), Q, 1.0) == pytest.approx(0.05, abs=1e-15)


def test_cost_linear_in_q():
    tab = table(5, theta_rad=np.linspace(0, 0.1, 5), pos_m=0.02)
    assert quadratic_cost(tab, 2 * Q, 0.0) == pytest.approx(2 * quadratic_cost(tab, Q, 0.0))


def test_cost_is_per_round_mean():
    tab = table(4, theta_rad=[0.1, 0.1, 0.0, 0.0])
    assert quadratic_cost(tab, Q, 1.0) == pytest.approx(0.025)


def test_cost_about_hanging_equilibrium():
    x_eq = np.array([math.pi, 0, 0, 0])
    assert quadratic_cost(table(3, theta_rad=math.pi), Q, 1.0, x_eq) == 0.0


def test_cost_includes_input():
    assert quadratic_cost(table(2, u_V=2.0), Q, 0.5) == pytest.approx(2.0)


def test_empty_trace_cost():
    assert quadratic_cost(table(0), Q, 1.0) == 0.0


def test_actuation_examples():
    assert actuation_intensity(table(25), TS) == 0.0
    assert actuation_intensity(table(25, u_V=10.0), TS) == pytest.approx(100.0)
    u = np.linspace(-3, 3, 25)
    assert actuation_intensity(table(25, u_V=2 * u), TS) == pytest.approx(
        4 * actuation_intensity(table(25, u_V=u), TS))


def test_network_stats_examples():
    gamma = np.zeros(100, dtype=np.int64)
    gamma[[5, 50, 77]] = 1
    stats = network_stats(table(100, gamma_state=gamma), None, 0.08, 3)
    assert stats["drop_rate_state"] == pytest.approx(0.03)
    assert stats["drop_rate_control"] == 0.0
    assert stats["loop_latency"] == 0.08
    assert stats["radio_duty_cycle"] == 0.0


def test_network_stats_duty_cycle_delegates():
    sched = RoundSchedule(0.04, (Slot(0, 16), Slot(1, 8)))
    stats = network_stats(table(3), sched, 0.08, 3)
    assert stats["radio_duty_cycle"] == pytest.approx((0.512e-3 + 0.256e-3 + 2e-3) * 3 / 0.04)


def test_sync_metric_examples():
    assert sync_metric(table(10, agents=2, pos_m=0.05)) == 0.0
    pos = np.tile([0.1, 0.0], 10)
    assert sync_metric(table(10, agents=2, pos_m=pos)) == pytest.approx(0.1)


def test_sync_metric_relabel_invariant():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(20, 3))
    a = sync_metric(table(20, agents=3, pos_m=pos.ravel()))
    b = sync_metric(table(20, agents=3, pos_m=pos[:, [2, 0, 1]].ravel()))
    assert a == pytest.approx(b, rel=1e-14)


def test_sync_metric_matches_definition():
    rng = np.random.default_rng(1)
    pos = rng.normal(size=(15, 3))
    pairs = [(0, 1), (0, 2), (1, 2)]
    expected = math.sqrt(np.mean([np.mean([(p[i] - p[j]) ** 2 for i, j in pairs]) for p in pos]))
    assert sync_metric(table(15, agents=3, pos_m=pos.ravel())) == pytest.approx(expected)


def test_sync_metric_window():
    pos = np.concatenate([np.tile([1.0, 0.0], 10), np.tile([0.0, 0.0], 10)])
    assert sync_metric(table(20, agents=2, pos_m=pos), t_start=10 * TS - 1e-9) == 0.0


def test_sync_metric_needs_two_agents():
    with pytest.raises(InvalidArgumentError):
        sync_metric(table(5))


def _compute(tab, **kw):
    args = dict(Q=Q, R=1.0, x_eq=np.zeros(4), sample_time=TS, schedule=None, loop_latency=0.08,
                hops_active=3)
    args.update(kw)
    return compute_metrics(tab, **args)


def test_compute_empty_report():
    rep = _compute(table(0))
    assert rep.empty and rep.rounds == 0 and rep.quadratic_cost == 0.0 and not rep.faulted


def test_compute_fractions_and_flags():
    theta = np.where(np.arange(100) % 10 == 0, math.radians(4.0), 0.0)
    tab = table(100, theta_rad=theta, pos_m=-0.1)
    tab["fault"][-1] = "track_limit"
    rep = _compute(tab, transient=0.0)
    assert rep.angle_within_3deg_fraction == pytest.approx(0.9)
    assert rep.max_abs_angle == pytest.approx(math.radians(4.0))
    assert rep.max_abs_pos == pytest.approx(0.1)
    assert rep.faulted and not rep.empty and rep.rounds == 100
    assert rep.sync_rms_error is None
    for name in ("angle_within_3deg_fraction", "drop_rate_state", "drop_rate_control",
                 "radio_duty_cycle"):
        assert 0.0 <= getattr(rep, name) <= 1.0


def test_compute_transient_excluded():
    theta = np.where(np.arange(100) < 50, 0.2, 0.0)
    rep = _compute(table(100, theta_rad=theta), transient=50 * TS - 1e-9)
    assert rep.angle_within_3deg_fraction == 1.0


def test_compute_sync_final_window():
    pos = np.concatenate([np.tile([0.5, -0.5], 50), np.tile([0.0, 0.0], 50)])
    rep = _compute(table(100, agents=2, pos_m=pos), final_window=50 * TS)
    assert rep.sync_rms_error == pytest.approx(math.sqrt(0.5))
    assert rep.sync_rms_error_final == 0.0


def test_report_json_roundtrip():
    rep = _compute(table(10, agents=2, pos_m=np.tile([0.1, 0.0], 10)))
    text = rep.to_json()
    assert MetricsReport.from_json(text) == rep
    assert set(json.loads(text)) >= {"quadratic_cost", "radio_duty_cycle", "faulted"}
