import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpsbench.exceptions import CapacityError, InvalidArgumentError, ScheduleError
from cpsbench.network import (Bernoulli, GilbertElliott, Packet, RoundSchedule, Slot, Topology,
                              min_hop_delay, radio_duty_cycle, run_round, sample_loss)


def test_min_hop_delay_examples():
    assert min_hop_delay(64, 1, 250_000) == pytest.approx(2.048e-3, abs=1e-15)
    assert min_hop_delay(64, 3, 250_000) == pytest.approx(6.144e-3, abs=1e-15)
    assert min_hop_delay(100, 0, 250_000) == 0.0


@given(st.integers(1, 128), st.integers(0, 10), st.integers(1, 128), st.integers(0, 10))
def test_min_hop_delay_linear(b1, h1, b2, h2):
    rate = 250_000
    assert min_hop_delay(b1 + b2, h1, rate) == pytest.approx(
        min_hop_delay(b1, h1, rate) + min_hop_delay(b2, h1, rate))
    assert min_hop_delay(b1, h1 + h2, rate) == pytest.approx(
        min_hop_delay(b1, h1, rate) + min_hop_delay(b1, h2, rate))


@pytest.mark.parametrize("hops,rate", [(-1, 250_000), (1, 0.0)])
def test_min_hop_delay_rejects(hops, rate):
    with pytest.raises(InvalidArgumentError):
        min_hop_delay(16, hops, rate)


def test_topology_validation():
    Topology(3, {(0, 1): 1, (1, 2): 1, (0, 2): 2})
    with pytest.raises(InvalidArgumentError):
        Topology(3, {(0, 1): 1, (1, 2): 1, (0, 2): 3})
    with pytest.raises(InvalidArgumentError):
        Topology(2, {(0, 1): 1, (1, 0): 2})
    with pytest.raises(InvalidArgumentError):
        Topology(2, {(0, 0): 1, (0, 1): 1})
    with pytest.raises(InvalidArgumentError):
        Topology.uniform(1, 1)


def test_uniform_topology():
    topo = Topology.uniform(4, 3)
    assert topo.hops(2, 0) == 3 and topo.hops(1, 1) == 0
    assert topo.diameter == 3


def test_schedule_fits_state_and_control_slots():
    sched = RoundSchedule(0.04, (Slot(0, 16), Slot(1, 4)), 250_000, 0.001)
    assert sched.busy_time() == pytest.approx(0.512e-3 + 0.128e-3 + 2e-3)


def test_schedule_over_capacity():
    with pytest.raises(CapacityError):
        RoundSchedule(0.04, tuple(Slot(i % 2, 16) for i in range(40)))


def test_schedule_rejects_bad_period_and_payload():
    with pytest.raises(InvalidArgumentError):
        RoundSchedule(0.0)
    with pytest.raises(InvalidArgumentError):
        Slot(0, 0)


def test_duty_cycle_examples():
    assert radio_duty_cycle(RoundSchedule(0.04, ()), 3) == 0.0
    # 2 ms airtime + 2 ms overhead = 4 ms of a 40 ms round.
    sched = RoundSchedule(0.04, (Slot(0, 31), Slot(1, 31)), 248_000, 0.001)
    assert radio_duty_cycle(sched, 1) == pytest.approx(0.1)
    full = RoundSchedule(0.04, (Slot(0, 1250),), 250_000, 0.0)
    assert radio_duty_cycle(full, 1) == 1.0
    assert radio_duty_cycle(full, 3) == 1.0


def test_loss_probability_domain():
    with pytest.raises(InvalidArgumentError):
        Bernoulli(1.5)
    with pytest.raises(InvalidArgumentError):
        GilbertElliott(0.1, -0.1, 0.0, 1.0)


@pytest.mark.parametrize("p,expected", [(0.0, True), (1.0, False)])
def test_bernoulli_extremes(p, expected):
    rng = np.random.default_rng(0)
    assert all(sample_loss(Bernoulli(p), 0, rng)[0] is expected for _ in range(500))


def test_gilbert_elliott_transitions():
    ge = GilbertElliott(1.0, 0.0, 0.0, 1.0)
    rng = np.random.default_rng(0)
    received, state = sample_loss(ge, 0, rng)
    assert received and state == 1
    received, state = sample_loss(ge, state, rng)
    assert not received and state == 1


def test_gilbert_elliott_bursts_are_longer():
    rng = np.random.default_rng(7)
    ge = GilbertElliott(0.02, 0.2, 0.0, 1.0)
    state, losses = 0, []
    for _ in range(50_000):
        ok, state = sample_loss(ge, state, rng)
        losses.append(not ok)
    losses = np.array(losses)
    rate = losses.mean()
    # Conditional loss after a loss far exceeds the marginal rate.
    after_loss = losses[1:][losses[:-1]].mean()
    assert after_loss > 3 * rate


def _setup():
    topo = Topology.uniform(3, 2)
    sched = RoundSchedule(0.04, (Slot(0, 16), Slot(1, 16), Slot(2, 8)))
    return topo, sched


def test_run_round_no_loss_delivers_at_round_end():
    topo, sched = _setup()
    pkt = Packet(0, 16, 0, "state", (2,))
    out = run_round(sched, topo, [pkt], Bernoulli(0.0), np.random.default_rng(0), round_start=1.2)
    assert len(out) == 1
    assert out[0].gamma == 0 and out[0].received
    assert out[0].delivered_at == pytest.approx(1.24)


def test_run_round_total_loss_sets_gamma():
    topo, sched = _setup()
    pkts = [Packet(2, 8, 0, "control", (0, 1)), Packet(0, 16, 0, "state", (1, 2))]
    out = run_round(sched, topo, pkts, Bernoulli(1.0), np.random.default_rng(0))
    assert [d.gamma for d in out] == [1, 1, 1, 1]
    assert all(d.gamma == (0 if d.received else 1) for d in out)


def test_run_round_ordering_by_slot_then_destination():
    topo, sched = _setup()
    pkts = [Packet(2, 8, 0, "control", (1, 0)), Packet(1, 16, 0, "state", (2, 0)),
            Packet(0, 16, 0, "state", (2, 1))]
    out = run_round(sched, topo, pkts, Bernoulli(0.0), np.random.default_rng(0))
    assert [(d.packet.source, d.destination) for d in out] == [
        (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_run_round_deterministic():
    topo, sched = _setup()
    pkts = [Packet(0, 16, k, "state", (1, 2)) for k in range(1)]
    a = run_round(sched, topo, pkts, Bernoulli(0.5), np.random.default_rng(11))
    b = run_round(sched, topo, pkts, Bernoulli(0.5), np.random.default_rng(11))
    assert [d.received for d in a] == [d.received for d in b]


def test_run_round_errors():
    topo, sched = _setup()
    rng = np.random.default_rng(0)
    with pytest.raises(CapacityError):
        run_round(sched, topo, [Packet(2, 9, 0, "control", (0,))], Bernoulli(0), rng)
    with pytest.raises(ScheduleError):
        run_round(sched, topo, [Packet(0, 8, 0, "state", (1,))] * 2, Bernoulli(0), rng)
    with pytest.raises(ScheduleError):
        run_round(sched, topo, [Packet(5, 8, 0, "state", (1,))], Bernoulli(0), rng)


def test_channel_state_is_per_link():
    topo, sched = _setup()
    ge = GilbertElliott(1.0, 0.0, 0.0, 1.0)
    states = {}
    pkt = Packet(0, 16, 0, "state", (1, 2))
    run_round(sched, topo, [pkt], ge, np.random.default_rng(0), channel_states=states)
    assert states == {(0, 1): 1, (0, 2): 1}


def test_packet_validation():
    with pytest.raises(InvalidArgumentError):
        Packet(0, 0, 0, "state")
    with pytest.raises(InvalidArgumentError):
        Packet(0, 4, 0, "ack")
