"""Scenario orchestration.

Timing per round ``r`` (length ``Ts``, starting at ``r * Ts``):

1. Controllers compute control packets from the state packets delivered at
   the end of round ``r - 1``. Each packet carries inputs for rounds
   ``r + 1 ... r + L``.
2. Every plant node picks the input for round ``r`` from its actuation
   buffer, samples its sensors, updates its estimate, and queues a state
   packet that also acknowledges the input it is applying.
3. The bus carries both packet kinds; receptions become visible at the end
   of the round.
4. Physics advances by ``Ts`` in fixed steps with the input held.

A state sensed at round ``r`` therefore drives the input applied during
round ``r + 2``: two rounds of loop delay for a remote controller. A local
controller acts on the fresh estimate within the same round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import ScenarioConfig, validate_config
from .control import (HANGING, UPRIGHT, ConsensusController, LinearModel, PredictorState,
                      build_augmented_sync_design, design_lqr, plant_model, predict_state,
                      rollout_inputs)
from .exceptions import InvalidArgumentError, PlaybackError
from .metrics import MetricsReport, compute_metrics
from .network import Packet, RoundSchedule, Slot, Topology, run_round
from .plant import (Disturbance, EstimatorState, Measurement, PlantState, apply_actuation,
                    estimate_state, measure, simulate_hold)
from .trace import Fault, Trace, TraceRow

_NO_DISTURBANCE = Disturbance()


@dataclass(frozen=True)
class TimingModel:
    rounds_of_delay: int
    sample_time: float

    @property
    def loop_delay(self) -> float:
        return loop_delay(self.rounds_of_delay, self.sample_time)


def loop_delay(rounds_of_delay: int, round_period: float) -> float:
    """Time between sensing a state and applying the input computed from it."""
    if rounds_of_delay < 0 or round_period < 0:
        raise InvalidArgumentError("delay inputs must be non-negative")
    return rounds_of_delay * round_period


@dataclass(frozen=True)
class Layout:
    """Static wiring of a scenario: who talks to whom, and when."""

    timing: TimingModel
    schedule: Optional[RoundSchedule]
    topology: Optional[Topology]
    served: Tuple[Tuple[int, ...], ...]
    x_eq: np.ndarray

    @property
    def hops_active(self) -> int:
        return self.topology.diameter if self.topology is not None else 0


def build_layout(cfg: ScenarioConfig) -> Layout:
    n, m = cfg.agent_count, cfg.controller_count
    net = cfg.network
    x_eq = UPRIGHT if cfg.stabilizes else HANGING
    remote = cfg.synchronizes or cfg.controller_location == "remote"
    if not remote:
        return Layout(TimingModel(0, net.round_period), None, None, (), x_eq)
    served = tuple(tuple(a for a in range(n) if a % m == c) for c in range(m))
    slots = [Slot(a, net.state_bytes) for a in range(n)]
    slots += [Slot(n + c, net.input_bytes * cfg.lookahead * len(served[c])) for c in range(m)]
    schedule = RoundSchedule(net.round_period, tuple(slots), net.bitrate, net.per_slot_overhead)
    topology = Topology.uniform(net.node_count, net.hops)
    return Layout(TimingModel(2, net.round_period), schedule, topology, served, x_eq)


def compute_report(table, cfg: ScenarioConfig) -> MetricsReport:
    """Metrics of a trace table under the weights and layout of ``cfg``."""
    layout = build_layout(cfg)
    return compute_metrics(
        table,
        Q=np.array(cfg.controller.Q),
        R=cfg.controller.R,
        x_eq=layout.x_eq,
        sample_time=cfg.network.round_period,
        schedule=layout.schedule,
        loop_latency=layout.timing.loop_delay,
        hops_active=layout.hops_active,
        transient=cfg.metrics.transient,
        final_window=cfg.metrics.final_window,
    )


class _PlantNode:
    def __init__(self, agent, state, sensor, rng, local_gain, x_eq):
        self.agent = agent
        self.state = state
        self.sensor = sensor
        self.rng = rng
        self.local_gain = local_gain
        self.x_eq = x_eq
        self.estimator = EstimatorState(filter_alpha=sensor.filter_alpha)
        self.buffer: Dict[int, Tuple[float, int]] = {}
        self.remote = (0.0, -1)

    def remote_input(self, r):
        # Newest packet covering round r wins; otherwise hold the last value.
        if r in self.buffer:
            self.remote = self.buffer[r]
        for k in [k for k in self.buffer if k <= r]:
            del self.buffer[k]
        return self.remote

    def receive_control(self, entries, src):
        for k, u in entries:
            self.buffer[k] = (u, src)

    def estimate(self, true_state, meas, Ts):
        if self.sensor.ideal:
            return true_state.as_array()
        self.estimator, x_hat = estimate_state(self.estimator, meas, Ts)
        return x_hat

    def local_input(self, x_hat):
        if self.local_gain is None:
            return 0.0
        return float(-(x_hat - self.x_eq) @ self.local_gain)


class _Controller:
    def __init__(self, node, served, n_agents, model, policy, per_agent, cfg):
        self.node = node
        self.served = served
        self.model = model
        self.policy = policy
        self.per_agent = per_agent
        self.lookahead = cfg.lookahead
        self.voltage_limit = cfg.plant.voltage_limit
        self.prediction = cfg.controller.prediction
        self.blackout_rounds = cfg.blackout_rounds
        self.preds = [PredictorState() for _ in range(n_agents)]
        self.acks: List[Dict[int, float]] = [{} for _ in range(n_agents)]
        self.belief: List[Dict[int, float]] = [{} for _ in range(n_agents)]

    def ingest(self, agent, data):
        if data is None:
            self.preds[agent].miss()
            return
        x_hat, ack, r = data
        self.preds[agent].receive(x_hat, r, ack)
        self.acks[agent][r] = ack
        for store in (self.acks[agent], self.belief[agent]):
            for k in [k for k in store if k < r]:
                del store[k]

    def blackout(self):
        return [a for a in self.served if self.preds[a].consecutive_losses >= self.blackout_rounds]

    def _history(self, agent, start, stop):
        hist = {}
        value = 0.0
        for k in range(start, stop):
            if k in self.acks[agent]:
                value = self.acks[agent][k]
            elif k in self.belief[agent]:
                value = self.belief[agent][k]
            hist[k] = value
        return hist

    def compute(self, r):
        """Control packet payload for round ``r``, or ``None`` while states are missing."""
        agents = self.served if self.per_agent else range(len(self.preds))
        agents = list(agents)
        if any(self.preds[a].last_state is None for a in agents):
            return None
        target = r + 1
        X = np.empty((len(agents), 4))
        for row, a in enumerate(agents):
            pred = self.preds[a]
            if self.prediction:
                pred.inputs = self._history(a, pred.last_round, target)
                X[row] = predict_state(pred, self.model, target - pred.last_round)
            else:
                X[row] = pred.last_state
        U = rollout_inputs(X, self.policy, self.model, self.lookahead, self.voltage_limit)
        src_all = max(self.preds[a].last_round for a in agents)
        payload = {}
        for row, a in enumerate(agents):
            if a not in self.served:
                continue
            entries = [(target + j, float(U[j, row])) for j in range(self.lookahead)]
            self.belief[a].update(entries)
            src = self.preds[a].last_round if self.per_agent else src_all
            payload[a] = (entries, src)
        return payload


class Simulation:
    """One deterministic run of a scenario, optionally replaying recorded sensing."""

    def __init__(self, cfg: ScenarioConfig, playback: Optional[dict] = None):
        validate_config(cfg)
        self.cfg = cfg
        self.layout = build_layout(cfg)
        self.Ts = cfg.network.round_period
        self.steps = int(round(self.Ts / cfg.physics_dt))
        self.playback = playback
        n = cfg.agent_count
        x_eq = self.layout.x_eq

        model = plant_model(cfg.plant, self.Ts, x_eq)
        Q = np.array(cfg.controller.Q)
        K = design_lqr(model, Q, cfg.controller.R).K[0] if cfg.stabilizes else None
        self.gain = K
        local_stab = cfg.stabilizes and cfg.controller_location == "local"
        remote_stab = cfg.stabilizes and cfg.controller_location == "remote"

        seeds = np.random.SeedSequence(cfg.seed).spawn(n + 1)
        self.net_rng = np.random.default_rng(seeds[n])
        self.channel_states = {}
        self.loss = cfg.network.loss.build()
        self.plants = [
            _PlantNode(a, self._initial_state(a), cfg.sensor, np.random.default_rng(seeds[a]),
                       K if local_stab else None, x_eq)
            for a in range(n)
        ]

        self.controllers: List[_Controller] = []
        if self.layout.schedule is not None:
            A = model.A - model.B @ K.reshape(1, 4) if local_stab else model.A
            pred_model = LinearModel(A, model.B, self.Ts, x_eq, 0.0)
            policy = self._policy(model, K if remote_stab else None)
            per_agent = not cfg.synchronizes
            for c, served in enumerate(self.layout.served):
                self.controllers.append(
                    _Controller(n + c, served, n, pred_model, policy, per_agent, cfg)
                )
        self.controller_of = {a: c for c, s in enumerate(self.layout.served) for a in s}

    def _initial_state(self, agent):
        cfg = self.cfg
        n = cfg.agent_count
        pos = 0.0 if n == 1 else -cfg.initial_spread + 2 * cfg.initial_spread * agent / (n - 1)
        if cfg.stabilizes:
            return PlantState(math.radians(cfg.initial_angle_deg), pos, 0.0, 0.0)
        return PlantState(math.pi, pos, 0.0, 0.0)

    def _policy(self, model, K):
        cfg = self.cfg
        ctl = cfg.controller
        x_eq = model.x_eq
        terms = []
        if K is not None:
            terms.append(lambda X: model.u_eq - (X - x_eq) @ K)
        if cfg.synchronizes and ctl.sync_method == "consensus":
            cons = ConsensusController(ctl.sync_graph, *cfg.sync_gains())
            cons.fit(np.zeros(cfg.agent_count))
            terms.append(lambda X: cons.predict(X[:, [1, 3]]))
        elif cfg.synchronizes:
            K_aug = build_augmented_sync_design(cfg.agent_count, model, ctl.sync_weight, ctl.R).K
            terms.append(lambda X: -K_aug @ (X - x_eq).ravel())

        def policy(X):
            u = np.zeros(X.shape[0])
            for term in terms:
                u = u + term(X)
            return u

        return policy

    # -- sensing sources ---------------------------------------------------

    def _rounds(self):
        n_rounds = int(math.floor(self.cfg.duration / self.Ts + 1e-9))
        if self.playback is not None:
            n_rounds = min(n_rounds, _check_playback(self.playback, self.cfg))
        return n_rounds

    def _sense(self, plant, r, t):
        if self.playback is None:
            return plant.state, measure(plant.state, self.cfg.sensor, plant.rng, t)
        tab = self.playback
        i = r * self.cfg.agent_count + plant.agent
        state = PlantState(tab["theta_rad"][i], tab["pos_m"][i],
                           tab["thetadot_rad_s"][i], tab["posdot_m_s"][i])
        return state, Measurement(float(tab["theta_meas_rad"][i]), float(tab["pos_meas_m"][i]), t)

    # -- main loop ---------------------------------------------------------

    def run(self) -> Trace:
        cfg = self.cfg
        trace = Trace(config=cfg, seed=cfg.seed)
        layout = self.layout
        n = cfg.agent_count
        for r in range(self._rounds()):
            t = r * self.Ts
            payloads = {}
            for ctl in self.controllers:
                lost = ctl.blackout()
                if lost:
                    for a in lost:
                        self._fault(trace, t, a, "blackout")
                    return trace
                payload = ctl.compute(r)
                if payload is not None:
                    payloads[ctl.node] = payload

            packets = []
            rows = []
            for plant in self.plants:
                u_remote, src = plant.remote_input(r)
                state, meas = self._sense(plant, r, t)
                x_hat = plant.estimate(state, meas, self.Ts)
                u = apply_actuation(plant.local_input(x_hat) + u_remote, cfg.plant)
                if layout.schedule is None:
                    src = r
                rows.append((plant, state, meas, x_hat, u, src))
                if layout.schedule is not None:
                    packets.append(Packet(plant.agent, cfg.network.state_bytes, r, "state",
                                          tuple(c.node for c in self.controllers),
                                          (x_hat, u_remote, r)))
            for ctl in self.controllers:
                if ctl.node in payloads:
                    size = cfg.network.input_bytes * cfg.lookahead * len(ctl.served)
                    packets.append(Packet(ctl.node, size, r, "control", ctl.served,
                                          payloads[ctl.node]))

            deliveries = []
            if layout.schedule is not None:
                deliveries = run_round(layout.schedule, layout.topology, packets,
                                       self.loss, self.net_rng,
                                       round_start=t, channel_states=self.channel_states)
            gamma_state = [0] * n
            gamma_control = [0] * n
            for d in deliveries:
                pkt = d.packet
                if pkt.kind == "state" and d.destination == n + self.controller_of[pkt.source]:
                    gamma_state[pkt.source] = d.gamma
                elif pkt.kind == "control":
                    gamma_control[d.destination] = d.gamma

            for plant, state, meas, x_hat, u, src in rows:
                a = plant.agent
                trace.rows.append(TraceRow(
                    t, a, state.theta, state.pos, float(x_hat[0]), float(x_hat[1]),
                    float(x_hat[2]), float(x_hat[3]), u, gamma_state[a], gamma_control[a],
                    state.theta_dot, state.pos_dot, meas.theta_meas, meas.pos_meas, src,
                ))

            if self.playback is None:
                for plant, state, meas, x_hat, u, src in rows:
                    plant.state, done = simulate_hold(plant.state, u, _NO_DISTURBANCE, cfg.plant,
                                                      cfg.physics_dt, self.steps,
                                                      cfg.plant.track_limit)
                    if done < self.steps or abs(plant.state.pos) > cfg.plant.track_limit:
                        self._fault(trace, t + done * cfg.physics_dt, plant.agent, "track_limit")
                if trace.faulted:
                    return trace

            for d in deliveries:
                pkt = d.packet
                if pkt.kind == "state":
                    ctl = self.controllers[d.destination - n]
                    ctl.ingest(pkt.source, pkt.data if d.received else None)
                elif d.received:
                    entries, src = pkt.data[d.destination]
                    self.plants[d.destination].receive_control(entries, src)
        return trace

    def _fault(self, trace, t, agent, kind):
        trace.faults.append(Fault(t, agent, kind))
        for i in range(len(trace.rows) - 1, -1, -1):
            row = trace.rows[i]
            if row.agent_id == agent:
                reason = kind if not row.fault else f"{row.fault};{kind}"
                trace.rows[i] = replace(row, fault=reason)
                break


def _check_playback(table, cfg: ScenarioConfig) -> int:
    n = cfg.agent_count
    rows = len(table["t_s"])
    if rows % n:
        raise PlaybackError(f"trace has {rows} rows, not a multiple of {n} agents")
    rounds = rows // n
    agent_ids = np.asarray(table["agent_id"]).reshape(rounds, n) if rounds else np.zeros((0, n))
    if rounds and not np.all(agent_ids == np.arange(n)):
        raise PlaybackError("trace rows are not ordered by round and agent id")
    times = np.asarray(table["t_s"]).reshape(rounds, n)[:, 0] if rounds else np.zeros(0)
    Ts = cfg.network.round_period
    if rounds and np.max(np.abs(times - np.arange(rounds) * Ts)) > 1e-6 * max(1.0, times[-1]):
        raise PlaybackError("trace round period does not match network.round_period")
    return rounds


def run_scenario(cfg: ScenarioConfig):
    """Simulate ``cfg``; returns the trace and its metrics report."""
    trace = Simulation(cfg).run()
    return trace, compute_report(trace.to_table(), cfg)


def playback_trace(recorded, cfg: ScenarioConfig) -> Trace:
    """Run controllers and network live against recorded sensing.

    ``recorded`` is a trace table (see :func:`cpsbench.trace.read_csv`).
    True-state columns and measurements are copied verbatim; estimates,
    inputs and loss flags are recomputed.
    """
    return Simulation(cfg, playback=recorded).run()
