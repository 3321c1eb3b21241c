"""Round-based low-power wireless bus.

The bus follows a time-triggered round structure: every node owning a slot
may send one packet per round, the packet is flooded to all nodes, and all
receptions become visible at the end of the round. Flooding internals are
abstracted away; hop counts only enter the duty-cycle accounting and the
single-packet delay bound.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import CapacityError, InvalidArgumentError, ScheduleError


def min_hop_delay(payload_bytes: int, hops: int, bitrate: float) -> float:
    """Lower bound on the latency of one packet: pure airtime over ``hops`` hops."""
    if hops < 0:
        raise InvalidArgumentError("hops must be non-negative")
    if not bitrate > 0:
        raise InvalidArgumentError("bitrate must be positive")
    return hops * (payload_bytes * 8 / bitrate)


@dataclass(frozen=True)
class Topology:
    node_count: int
    hop_distance: Dict[Tuple[int, int], int]

    def __post_init__(self):
        if self.node_count < 2:
            raise InvalidArgumentError("a network needs at least two nodes")
        n = self.node_count
        d = self.hops
        for i in range(n):
            if d(i, i) != 0:
                raise InvalidArgumentError(f"hop_distance({i},{i}) must be 0")
        for i, j in itertools.combinations(range(n), 2):
            if d(i, j) != d(j, i):
                raise InvalidArgumentError(f"hop_distance not symmetric for ({i},{j})")
            if d(i, j) < 0:
                raise InvalidArgumentError("hop distances must be non-negative")
        for i, j, k in itertools.permutations(range(n), 3):
            if d(i, k) > d(i, j) + d(j, k):
                raise InvalidArgumentError(f"triangle inequality violated at ({i},{j},{k})")

    def hops(self, i: int, j: int) -> int:
        if i == j:
            return self.hop_distance.get((i, i), 0)
        if (i, j) in self.hop_distance:
            return self.hop_distance[(i, j)]
        return self.hop_distance[(j, i)]

    @classmethod
    def uniform(cls, node_count: int, hops: int) -> "Topology":
        """Every pair of distinct nodes is ``hops`` apart."""
        dist = {(i, j): (0 if i == j else hops)
                for i in range(node_count) for j in range(i, node_count)}
        return cls(node_count, dist)

    @property
    def diameter(self) -> int:
        return max(self.hops(i, j) for i in range(self.node_count) for j in range(self.node_count))


@dataclass(frozen=True)
class Slot:
    source: int
    payload_bytes: int

    def __post_init__(self):
        if self.payload_bytes < 1:
            raise InvalidArgumentError("payload_bytes must be at least 1")


@dataclass(frozen=True)
class RoundSchedule:
    round_period: float = 0.04
    slots: Tuple[Slot, ...] = ()
    bitrate: float = 250_000.0
    per_slot_overhead: float = 0.001

    def __post_init__(self):
        if not self.round_period > 0:
            raise InvalidArgumentError("round_period must be positive")
        if not self.bitrate > 0:
            raise InvalidArgumentError("bitrate must be positive")
        if self.per_slot_overhead < 0:
            raise InvalidArgumentError("per_slot_overhead must be non-negative")
        object.__setattr__(self, "slots", tuple(self.slots))
        busy = self.busy_time()
        if busy > self.round_period:
            raise CapacityError(
                f"slots need {busy * 1e3:.3f} ms but the round lasts {self.round_period * 1e3:.3f} ms"
            )

    def slot_airtime(self, slot: Slot) -> float:
        return slot.payload_bytes * 8 / self.bitrate

    def busy_time(self) -> float:
        """Airtime plus per-slot overhead of one round."""
        return sum(self.slot_airtime(s) + self.per_slot_overhead for s in self.slots)


def radio_duty_cycle(schedule: RoundSchedule, hops_active: int) -> float:
    """Fraction of the round the radios are on, scaled by the hops a flood spans."""
    if not schedule.slots:
        return 0.0
    return min(1.0, schedule.busy_time() * hops_active / schedule.round_period)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidArgumentError("p must lie in [0, 1]")


@dataclass(frozen=True)
class GilbertElliott:
    """Two-state Markov channel; state 0 is good, state 1 is bad."""

    p_good_to_bad: float
    p_bad_to_good: float
    loss_good: float
    loss_bad: float

    def __post_init__(self):
        for name in ("p_good_to_bad", "p_bad_to_good", "loss_good", "loss_bad"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1]")


LossModel = Union[Bernoulli, GilbertElliott]


def sample_loss(model: LossModel, channel_state: int, rng: np.random.Generator):
    """Draw one reception outcome; returns ``(received, next_channel_state)``."""
    if isinstance(model, Bernoulli):
        return bool(rng.random() >= model.p), channel_state
    loss = model.loss_bad if channel_state else model.loss_good
    received = bool(rng.random() >= loss)
    if channel_state:
        nxt = 0 if rng.random() < model.p_bad_to_good else 1
    else:
        nxt = 1 if rng.random() < model.p_good_to_bad else 0
    return received, nxt


@dataclass(frozen=True)
class Packet:
    source: int
    payload_bytes: int
    sequence: int
    kind: str
    destinations: Tuple[int, ...] = ()
    data: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.payload_bytes < 1:
            raise InvalidArgumentError("payload_bytes must be at least 1")
        if self.kind not in ("state", "control"):
            raise InvalidArgumentError(f"unknown packet kind {self.kind!r}")


@dataclass(frozen=True)
class Delivery:
    packet: Packet
    destination: int
    received: bool
    delivered_at: float

    @property
    def gamma(self) -> int:
        return 0 if self.received else 1


def run_round(schedule: RoundSchedule, topology: Topology, packets: Sequence[Packet],
              loss: LossModel, rng: np.random.Generator, *, round_start: float = 0.0,
              channel_states: Optional[Dict[Hashable, int]] = None) -> List[Delivery]:
    """Exchange ``packets`` during one round.

    Each packet occupies the next free slot of its source. Loss is sampled
    independently per packet and destination (per-link channel state for
    bursty models, kept in ``channel_states``). Deliveries are ordered by
    slot index, then destination id, and all carry the round end time.
    """
    if channel_states is None:
        channel_states = {}
    free: Dict[int, List[int]] = {}
    for idx, slot in enumerate(schedule.slots):
        free.setdefault(slot.source, []).append(idx)
    placed = []
    for pkt in packets:
        if not 0 <= pkt.source < topology.node_count:
            raise ScheduleError(f"unknown source node {pkt.source}")
        queue = free.get(pkt.source)
        if not queue:
            raise ScheduleError(f"node {pkt.source} has no free slot this round")
        idx = queue.pop(0)
        if pkt.payload_bytes > schedule.slots[idx].payload_bytes:
            raise CapacityError(
                f"packet of {pkt.payload_bytes} B exceeds slot {idx} "
                f"({schedule.slots[idx].payload_bytes} B)"
            )
        placed.append((idx, pkt))
    placed.sort(key=lambda item: item[0])

    end = round_start + schedule.round_period
    out = []
    for idx, pkt in placed:
        for dest in sorted(pkt.destinations):
            link = (pkt.source, dest)
            received, channel_states[link] = sample_loss(loss, channel_states.get(link, 0), rng)
            out.append(Delivery(pkt, dest, received, end))
    return out
