"""Deterministic discrete-event simulator.

One Simulation owns a virtual clock, a seeded RNG, the node population,
and an event heap. Time is continuous; churn replaces a fixed fraction of
the population on periodic ticks, membership shuffles run on their own
ticks (view mode), message deliveries arrive after per-message sampled
delays, and the workload generator injects read/write operations. Every
source of randomness flows from the single run seed, so a (config, seed)
pair reproduces its trace bit-exactly.
"""
from __future__ import annotations

import heapq
import json
import hashlib
import logging
import math
import random
from dataclasses import dataclass, field, asdict, replace
from typing import Optional

from . import protocol
from .core import ABSENT, CONS, INITIAL_TAG, KIND_NAMES, Message, PROP, PhaseKey, RESP, Tag
from .formulas import (ParameterError, SystemParams, dissemination_depth,
                       quorum_size)
from .membership import (NeighborEntry, PerfectSampler, View, ViewSampler,
                         age_tick, bootstrap_view, merge_received,
                         shuffle_initiate, shuffle_receive)
from .protocol import NodeState, OpDriver, ProtocolParams, participate, phase_poll
from .traces import (CLIENT_DEPARTED, COMPLETED, OpRecord, Snapshot, TIMEOUT,
                     TraceBundle)

log = logging.getLogger("tqsim")

PERFECT, CYCLON = "perfect", "cyclon"

# Event kinds, dispatched in (time, seq) order.
EV_DELIVER, EV_CHURN, EV_SHUFFLE, EV_SNAPSHOT, EV_OP_START, EV_RETRY, EV_OP_TIMEOUT = range(7)


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class DelaySpec:
    """Per-message delay model: fixed d, uniform [low, high], or
    exponential with the given mean."""

    kind: str = "fixed"
    value: float = 1.0
    low: float = 0.5
    high: float = 1.5
    mean: float = 1.0

    def problems(self) -> list:
        if self.kind == "fixed":
            return [] if self.value > 0 else ["fixed delay must be positive"]
        if self.kind == "uniform":
            return [] if 0 < self.low <= self.high else ["uniform delay needs 0 < low <= high"]
        if self.kind == "exponential":
            return [] if self.mean > 0 else ["exponential delay needs positive mean"]
        return [f"unknown delay kind {self.kind!r}"]

    def make_draw(self, rng: random.Random):
        if self.kind == "fixed":
            d = self.value
            return lambda: d
        if self.kind == "uniform":
            lo, hi = self.low, self.high
            return lambda: rng.uniform(lo, hi)
        return lambda: rng.expovariate(1.0 / self.mean)

    def upper_estimate(self) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "uniform":
            return self.high
        return 3.0 * self.mean

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "value": self.value}
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low, "high": self.high}
        return {"kind": "exponential", "mean": self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "DelaySpec":
        return cls(**{**{"kind": "fixed"}, **d})


SEQUENTIAL, PERIODIC, SCRIPT = "sequential", "periodic", "script"


@dataclass(frozen=True)
class WorkloadSpec:
    """What operations to inject.

    sequential — `pairs` write/read pairs, each op starting when the
    previous one resolves; periodic — writes every `write_period` and
    reads at `read_rate` per time unit until the duration runs out
    (writes stop at `t_write_stop` when set); script — an explicit list
    of (at, kind, value, client) entries, concurrency included.
    """

    kind: str = SEQUENTIAL
    pairs: int = 10
    write_period: float = 10.0
    read_rate: float = 0.25
    t_write_stop: Optional[float] = None
    script: tuple = ()
    client_selection: str = "uniform"

    def problems(self) -> list:
        out = []
        if self.kind not in (SEQUENTIAL, PERIODIC, SCRIPT):
            out.append(f"unknown workload kind {self.kind!r}")
        if self.client_selection != "uniform":
            out.append(f"unsupported client_selection {self.client_selection!r}")
        if self.kind == SEQUENTIAL and self.pairs < 0:
            out.append("sequential workload needs pairs >= 0")
        if self.kind == PERIODIC:
            if self.write_period <= 0:
                out.append("periodic workload needs write_period > 0")
            if self.read_rate < 0:
                out.append("periodic workload needs read_rate >= 0")
        if self.kind == SCRIPT:
            for entry in self.script:
                if entry[1] not in (protocol.READ, protocol.WRITE):
                    out.append(f"script op kind must be read/write (got {entry[1]!r})")
                    break
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "client_selection": self.client_selection}
        if self.kind == SEQUENTIAL:
            d["pairs"] = self.pairs
        elif self.kind == PERIODIC:
            d["write_period"] = self.write_period
            d["read_rate"] = self.read_rate
            if self.t_write_stop is not None:
                d["t_write_stop"] = self.t_write_stop
        else:
            d["script"] = [list(e) for e in self.script]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        d = dict(d)
        if "script" in d:
            d["script"] = tuple(tuple(e) for e in d["script"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run. Serializes to/from flat JSON."""

    n: int
    c: float = 0.0
    delta: float = 10.0
    beta: float = 2.0
    k: int = 3
    seed: int = 1
    q_override: Optional[int] = None
    message_delay: DelaySpec = field(default_factory=DelaySpec)
    churn_period: float = 1.0
    duration: Optional[float] = None
    membership_mode: str = PERFECT
    view_size: int = 20
    shuffle_period: float = 1.0
    age_limit: Optional[int] = None
    bootstrap_fanout: int = 1
    prop_adoption_mode: str = protocol.MONOTONIC
    dup_hop_cap: Optional[int] = None
    phase_retry_period: float = 10.0
    op_timeout: float = 50.0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    initial_holders: Optional[int] = None
    initial_value: str = "v0"
    snapshot_period: float = 1.0
    record_messages: bool = False

    # -- derived quantities ------------------------------------------------

    def params(self) -> SystemParams:
        return SystemParams(self.n, self.c, self.delta, self.beta, self.k)

    def quorum(self) -> int:
        if self.q_override is not None:
            return self.q_override
        return quorum_size(self.params())

    def depth(self) -> int:
        return dissemination_depth(self.quorum(), self.k)

    def protocol_params(self) -> ProtocolParams:
        q = self.quorum()
        ell = dissemination_depth(q, self.k)
        return ProtocolParams(q=q, k=self.k, ell=ell,
                              prop_adoption=self.prop_adoption_mode,
                              dup_hop_cap=self.dup_hop_cap or 0)

    def holders(self) -> int:
        return self.quorum() if self.initial_holders is None else self.initial_holders

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list:
        out = self.params().problems()
        out += self.message_delay.problems()
        out += self.workload.problems()
        q = None
        if not out:
            try:
                q = self.quorum()
            except ParameterError as e:
                out.append(str(e))
        if q is not None:
            if self.q_override is not None and not 1 <= self.q_override <= self.n:
                out.append(f"q_override must be in [1, n] (got {self.q_override})")
            if self.holders() < q:
                out.append(f"initial_holders {self.holders()} below quorum size {q}")
            if self.holders() > self.n:
                out.append(f"initial_holders {self.holders()} exceeds n {self.n}")
        if self.membership_mode not in (PERFECT, CYCLON):
            out.append(f"membership_mode must be perfect or cyclon (got {self.membership_mode!r})")
        if self.prop_adoption_mode not in (protocol.LITERAL, protocol.MONOTONIC):
            out.append(f"prop_adoption_mode must be literal or monotonic (got {self.prop_adoption_mode!r})")
        for name in ("churn_period", "shuffle_period", "phase_retry_period", "op_timeout"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        if self.snapshot_period <= 0:
            out.append("snapshot_period must be positive")
        if self.duration is not None and self.duration < 0:
            out.append("duration must be >= 0")
        if self.duration is None:
            if self.c > 0:
                out.append("churn (c > 0) requires a finite duration")
            if self.membership_mode == CYCLON:
                out.append("cyclon membership requires a finite duration")
            if self.workload.kind == PERIODIC:
                out.append("periodic workload requires a finite duration")
        if self.membership_mode == CYCLON and self.view_size < self.k + 1:
            out.append(f"view_size must be >= k+1 (got {self.view_size} < {self.k + 1})")
        if q is not None and self.workload.kind == PERIODIC:
            # Keep one propagation starting inside every lifetime window:
            # a phase costs roughly (depth + 2) delays.
            ell = dissemination_depth(q, self.k)
            phase_time = (ell + 2) * self.message_delay.upper_estimate()
            if self.workload.write_period > self.delta - phase_time:
                out.append(
                    f"write_period {self.workload.write_period} exceeds "
                    f"delta - estimated phase time ({self.delta} - {phase_time})")
        return out

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["message_delay"] = self.message_delay.to_dict()
        d["workload"] = self.workload.to_dict()
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "message_delay" in d:
            d["message_delay"] = DelaySpec.from_dict(d["message_delay"])
        if "workload" in d:
            d["workload"] = WorkloadSpec.from_dict(d["workload"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class Population:
    """The live node set; size returns to n after every churn tick and
    departed identifiers are never reused."""

    live: dict = field(default_factory=dict)    # NodeId -> NodeState
    live_ids: list = field(default_factory=list)
    _pos: dict = field(default_factory=dict)
    next_id: int = 1
    n: int = 0

    def add(self, state: NodeState) -> None:
        self.live[state.me] = state
        self._pos[state.me] = len(self.live_ids)
        self.live_ids.append(state.me)

    def remove(self, node_id: int) -> NodeState:
        state = self.live.pop(node_id)
        idx = self._pos.pop(node_id)
        last = self.live_ids.pop()
        if last != node_id:
            self.live_ids[idx] = last
            self._pos[last] = idx
        return state

    def fresh_state(self) -> NodeState:
        state = NodeState(me=self.next_id)
        self.next_id += 1
        return state


def init_population(cfg: ExperimentConfig, rng: random.Random) -> Population:
    """Build the starting population: n live nodes, `initial_holders` of
    them holding the default value at the initial tag, the rest holding
    nothing; views bootstrapped at random in cyclon mode."""
    cfg.validate()
    pop = Population(n=cfg.n)
    for _ in range(cfg.n):
        pop.add(pop.fresh_state())
    holders = rng.sample(pop.live_ids, cfg.holders())
    for node_id in holders:
        pop.live[node_id].val = cfg.initial_value
    if cfg.membership_mode == CYCLON:
        ids = pop.live_ids
        for node_id in ids:
            others = [i for i in ids if i != node_id]
            picked = rng.sample(others, min(cfg.view_size, len(others)))
            pop.live[node_id].view = View(node_id, cfg.view_size,
                                          [NeighborEntry(i, 0) for i in picked])
    return pop


class _PhaseTrace:
    """Engine-side measurement record for one dissemination phase."""

    __slots__ = ("key", "op_id", "kind", "payload_value", "payload_tag",
                 "t_start", "t_end", "participants", "msgs", "max_depth",
                 "retries", "degraded", "responders", "closed")

    def __init__(self, key, op_id, kind, payload_value, payload_tag, t_start, degraded):
        self.key = key
        self.op_id = op_id
        self.kind = kind
        self.payload_value = payload_value
        self.payload_tag = payload_tag
        self.t_start = t_start
        self.t_end = None
        self.participants = set()
        self.msgs = 0
        self.max_depth = 0
        self.retries = 0
        self.degraded = degraded
        self.responders = frozenset()
        self.closed = False


class _OpState:
    __slots__ = ("op_id", "driver", "client", "t_invoke", "consult_rec", "prop_rec")

    def __init__(self, op_id, driver, client, t_invoke):
        self.op_id = op_id
        self.driver = driver
        self.client = client
        self.t_invoke = t_invoke
        self.consult_rec = None
        self.prop_rec = None


class Simulation:
    """One seeded run of an experiment."""

    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.pp = cfg.protocol_params()
        self.q = self.pp.q
        self.rng = random.Random(cfg.seed)
        self.now = 0.0
        self._seq = 0
        self._heap = []
        self.pop = init_population(cfg, self.rng)
        self._delay = cfg.message_delay.make_draw(self.rng)
        if cfg.membership_mode == PERFECT:
            self._sampler_factory = PerfectSampler(self.pop.live_ids, self.rng)
        else:
            self._sampler_factory = ViewSampler(self.pop.live, self.rng)
        self._samplers = {i: self._sampler_factory.for_node(i) for i in self.pop.live_ids}

        self.busy = set()
        self.active_ops = {}      # op_id -> _OpState
        self.active_phases = {}   # PhaseKey -> _PhaseTrace
        self.ongoing_props = {}   # PhaseKey -> Tag
        self.last_completed_prop_tag = INITIAL_TAG
        self.op_records = []
        self.snapshots = []
        self.messages = []
        self._op_counter = 0
        self._next_seq_op = 0
        self._seq_ops = []
        self.counters = {
            "messages_sent": 0, "delivered": 0, "dropped_to_dead": 0,
            "duplicate_deliveries": 0, "dup_capped": 0, "late_responses": 0,
            "retries": 0, "replaced_nodes": 0, "skipped_ops": 0,
        }
        self._schedule_initial()

    # -- scheduling ----------------------------------------------------------

    def _push(self, at, kind, a=None, b=None, c=None):
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, kind, a, b, c))

    def _horizon(self) -> float:
        return math.inf if self.cfg.duration is None else self.cfg.duration

    def _op_cutoff(self) -> float:
        if self.cfg.duration is None:
            return math.inf
        return self.cfg.duration - self.cfg.op_timeout

    def _schedule_initial(self):
        cfg = self.cfg
        if cfg.duration is not None:
            self._push(0.0, EV_SNAPSHOT)
            if cfg.c > 0 and cfg.churn_period <= cfg.duration:
                self._push(cfg.churn_period, EV_CHURN)
            if cfg.membership_mode == CYCLON and cfg.shuffle_period <= cfg.duration:
                self._push(cfg.shuffle_period, EV_SHUFFLE)
        wl = cfg.workload
        if wl.kind == SEQUENTIAL:
            for i in range(wl.pairs):
                self._seq_ops.append((protocol.WRITE, None, None))
                self._seq_ops.append((protocol.READ, None, None))
            if self._seq_ops:
                self._push(0.0, EV_OP_START, self._seq_ops[0])
                self._next_seq_op = 1
        elif wl.kind == PERIODIC:
            cutoff = self._op_cutoff()
            w_stop = cutoff if wl.t_write_stop is None else min(cutoff, wl.t_write_stop)
            t = wl.write_period
            while t <= w_stop:
                self._push(t, EV_OP_START, (protocol.WRITE, None, None))
                t += wl.write_period
            if wl.read_rate > 0:
                interval = 1.0 / wl.read_rate
                t = interval
                while t <= cutoff:
                    self._push(t, EV_OP_START, (protocol.READ, None, None))
                    t += interval
        else:
            cutoff = self._op_cutoff()
            for entry in wl.script:
                at, kind = entry[0], entry[1]
                value = entry[2] if len(entry) > 2 else None
                client = entry[3] if len(entry) > 3 else None
                if at <= cutoff:
                    self._push(at, EV_OP_START, (kind, value, client))
                else:
                    self.counters["skipped_ops"] += 1

    # -- run loop ------------------------------------------------------------

    def run(self) -> TraceBundle:
        horizon = self._horizon()
        heap = self._heap
        while heap:
            at, _, kind, a, b, c = heapq.heappop(heap)
            if at > horizon:
                break
            self.now = at
            if kind == EV_DELIVER:
                self._deliver(a, b, c)
            elif kind == EV_RETRY:
                self._retry(a)
            elif kind == EV_OP_START:
                self._op_start(a)
            elif kind == EV_OP_TIMEOUT:
                self._op_timeout(a)
            elif kind == EV_CHURN:
                self._churn_tick()
            elif kind == EV_SHUFFLE:
                self._shuffle_tick()
            else:
                self._snapshot_tick()
        # Defensive: ops are injected early enough that their timeout event
        # fires inside the horizon, so nothing should still be open here.
        for op_id in list(self.active_ops):
            self._finish_op(self.active_ops[op_id], TIMEOUT)
        return self._bundle(truncated=self.cfg.duration is not None and not heap
                            and self.now < self.cfg.duration)

    def _bundle(self, truncated: bool) -> TraceBundle:
        meta = {
            "config": self.cfg.to_dict(),
            "config_digest": self.cfg.digest(),
            "seed": self.cfg.seed,
            "q": self.q,
            "ell": self.pp.ell,
            "dup_hop_cap": self.pp.cap(),
            "end_time": self.now,
            "truncated": truncated,
            "counters": dict(self.counters),
            "ops_total": len(self.op_records),
        }
        bundle = TraceBundle(ops=self.op_records, snapshots=self.snapshots, meta=meta)
        if self.cfg.record_messages:
            bundle.meta["messages_recorded"] = len(self.messages)
            bundle.messages = self.messages  # extra attribute for callers
        return bundle

    # -- event handlers -------------------------------------------------------

    def _send(self, to, msg, hops):
        key = PhaseKey(to, msg.sn) if msg.kind == RESP else PhaseKey(msg.client, msg.sn)
        rec = self.active_phases.get(key)
        if rec is not None:
            rec.msgs += 1
        self.counters["messages_sent"] += 1
        self._push(self.now + self._delay(), EV_DELIVER, msg, to, hops)

    def _log_msg(self, msg, to, hops, event):
        self.messages.append((self.now, KIND_NAMES[msg.kind], msg.sn,
                              msg.client, msg.sender, to, msg.ttl, hops, event))

    def _deliver(self, msg, to, hops):
        st = self.pop.live.get(to)
        if st is None:
            self.counters["dropped_to_dead"] += 1
            if self.cfg.record_messages:
                self._log_msg(msg, to, hops, "dropped_dead")
            return
        self.counters["delivered"] += 1
        out = participate(st, msg, hops, self._samplers[to], self.pp)
        for tgt, m, h in out.sends:
            self._send(tgt, m, h)
        if out.marked_key is not None:
            rec = self.active_phases.get(out.marked_key)
            if rec is not None:
                rec.participants.add(to)
                if out.depth > rec.max_depth:
                    rec.max_depth = out.depth
            if self.cfg.record_messages:
                self._log_msg(msg, to, hops, "participated")
        elif msg.kind != RESP:
            self.counters["duplicate_deliveries"] += 1
            if out.dup_capped:
                self.counters["dup_capped"] += 1
            if self.cfg.record_messages:
                self._log_msg(msg, to, hops, "capped" if out.dup_capped else "duplicate")
        if out.late_resp:
            self.counters["late_responses"] += 1
            if self.cfg.record_messages:
                self._log_msg(msg, to, hops, "resp_late")
        if out.resp_key is not None:
            if self.cfg.record_messages:
                self._log_msg(msg, to, hops, "resp_counted")
            rec = self.active_phases.get(out.resp_key)
            if rec is not None and phase_poll(st, out.resp_key, self.q):
                self._phase_complete(rec, st)

    def _open_phase(self, ops, phase_kind, key, sends, degraded, payload):
        value, tag = payload
        rec = _PhaseTrace(key, ops.op_id, phase_kind, value, tag, self.now, degraded)
        self.active_phases[key] = rec
        if phase_kind == PROP:
            ops.prop_rec = rec
            self.ongoing_props[key] = tag
        else:
            ops.consult_rec = rec
        for tgt, m, h in sends:
            self._send(tgt, m, h)
        self._push(self.now + self.cfg.phase_retry_period, EV_RETRY, key)
        # Degenerate quorum sizes complete without any responses.
        st = self.pop.live.get(ops.client)
        if st is not None and phase_poll(st, key, self.q):
            self._phase_complete(rec, st)

    def _phase_complete(self, rec, st):
        rec.closed = True
        rec.t_end = self.now
        rec.responders = protocol.close_phase(st, rec.key)
        self.active_phases.pop(rec.key, None)
        ops = self.active_ops.get(rec.op_id)
        if ops is None:
            return
        if rec.kind == CONS:
            key, sends, degraded = ops.driver.consult_complete(st, self._samplers[st.me], self.pp)
            self._open_phase(ops, PROP, key, sends, degraded, ops.driver.propagated)
        else:
            self.ongoing_props.pop(rec.key, None)
            if rec.payload_tag > self.last_completed_prop_tag:
                self.last_completed_prop_tag = rec.payload_tag
            self._finish_op(ops, COMPLETED)

    def _op_start(self, spec):
        kind, value, wanted = spec
        client = self._pick_client(wanted)
        if client is None:
            self.counters["skipped_ops"] += 1
            self._advance_sequential()
            return
        self._op_counter += 1
        op_id = self._op_counter
        if kind == protocol.WRITE and value is None:
            value = f"v{op_id}"
        driver = OpDriver(op_id, kind, value)
        ops = _OpState(op_id, driver, client, self.now)
        self.active_ops[op_id] = ops
        self.busy.add(client)
        st = self.pop.live[client]
        key, sends, degraded = driver.begin(st, self._samplers[client], self.pp)
        self._open_phase(ops, CONS, key, sends, degraded, (st.val, st.tag))
        self._push(self.now + self.cfg.op_timeout, EV_OP_TIMEOUT, op_id)

    def _pick_client(self, wanted):
        if wanted is not None:
            return wanted if wanted in self.pop.live and wanted not in self.busy else None
        ids = self.pop.live_ids
        if not ids:
            return None
        for _ in range(64):
            cand = ids[self.rng.randrange(len(ids))]
            if cand not in self.busy:
                return cand
        return None

    def _advance_sequential(self):
        if self.cfg.workload.kind != SEQUENTIAL:
            return
        if self._next_seq_op < len(self._seq_ops):
            self._push(self.now, EV_OP_START, self._seq_ops[self._next_seq_op])
            self._next_seq_op += 1

    def _retry(self, key):
        rec = self.active_phases.get(key)
        if rec is None or rec.closed:
            return
        ops = self.active_ops.get(rec.op_id)
        st = self.pop.live.get(key.client)
        if ops is None or st is None:
            return
        if rec.kind == CONS:
            value, tag = st.val, st.tag
        else:
            value, tag = rec.payload_value, rec.payload_tag
        phase_kind = CONS if rec.kind == CONS else PROP
        sends, degraded = protocol.refan_phase(st, key, phase_kind, value, tag,
                                               self._samplers[st.me], self.pp)
        rec.retries += 1
        rec.degraded = rec.degraded or degraded
        self.counters["retries"] += 1
        for tgt, m, h in sends:
            self._send(tgt, m, h)
        self._push(self.now + self.cfg.phase_retry_period, EV_RETRY, key)

    def _op_timeout(self, op_id):
        ops = self.active_ops.get(op_id)
        if ops is not None:
            self._finish_op(ops, TIMEOUT)

    def _finish_op(self, ops, status):
        driver = ops.driver
        for rec in (ops.consult_rec, ops.prop_rec):
            if rec is not None and not rec.closed:
                rec.closed = True
                self.active_phases.pop(rec.key, None)
                self.ongoing_props.pop(rec.key, None)
                st = self.pop.live.get(ops.client)
                if st is not None:
                    protocol.close_phase(st, rec.key)
        self.active_ops.pop(ops.op_id, None)
        self.busy.discard(ops.client)
        returned = driver.returned or (None, None)
        propagated = driver.propagated or (None, None)
        crec, prec = ops.consult_rec, ops.prop_rec
        record = OpRecord(
            op_id=ops.op_id,
            kind=driver.kind,
            client=ops.client,
            t_invoke=ops.t_invoke,
            t_respond=self.now if status == COMPLETED else None,
            status=status,
            returned_value=returned[0],
            returned_tag=returned[1],
            propagated_value=propagated[0],
            propagated_tag=propagated[1],
            consult_start=crec.t_start if crec else None,
            consult_end=crec.t_end if crec else None,
            prop_start=prec.t_start if prec else None,
            prop_end=prec.t_end if prec else None,
            consult_responders=crec.responders if crec else frozenset(),
            prop_responders=prec.responders if prec else frozenset(),
            distinct_contacts=(len(crec.participants) if crec else 0)
                              + (len(prec.participants) if prec else 0),
            max_depth=max(crec.max_depth if crec else 0, prec.max_depth if prec else 0),
            messages_sent=(crec.msgs if crec else 0) + (prec.msgs if prec else 0),
            retries=(crec.retries if crec else 0) + (prec.retries if prec else 0),
            degraded=bool(crec and crec.degraded) or bool(prec and prec.degraded),
        )
        self.op_records.append(record)
        self._advance_sequential()

    def _churn_tick(self):
        replaced = churn_tick(self.pop, self.cfg, self.rng,
                              on_depart=self._node_departed,
                              on_join=self._node_joined)
        self.counters["replaced_nodes"] += replaced
        nxt = self.now + self.cfg.churn_period
        if nxt <= self._horizon():
            self._push(nxt, EV_CHURN)

    def _node_departed(self, node_id):
        self._samplers.pop(node_id, None)
        if node_id in self.busy:
            for ops in list(self.active_ops.values()):
                if ops.client == node_id:
                    self._finish_op(ops, CLIENT_DEPARTED)

    def _node_joined(self, node_id):
        self._samplers[node_id] = self._sampler_factory.for_node(node_id)

    def _shuffle_tick(self):
        live = self.pop.live
        ids = sorted(live)
        age_limit = self.cfg.age_limit or self.cfg.view_size
        for node_id in ids:
            st = live[node_id]
            st.view = age_tick(st.view, age_limit)
        for node_id in ids:
            st = live.get(node_id)
            if st is None:
                continue
            picked = shuffle_initiate(st.view)
            if picked is None:
                continue
            target, offer = picked
            peer = live.get(target)
            if peer is None:
                continue  # failed neighbor; its entry ages out
            reply, peer_view = shuffle_receive(peer.view, offer, node_id)
            peer.view = peer_view
            st.view = merge_received(st.view, reply)
        nxt = self.now + self.cfg.shuffle_period
        if nxt <= self._horizon():
            self._push(nxt, EV_SHUFFLE)

    def _snapshot_tick(self):
        self.snapshots.append(Snapshot(self.now, self.uptodate_count(),
                                       len(self.pop.live)))
        nxt = self.now + self.cfg.snapshot_period
        if nxt <= self._horizon():
            self._push(nxt, EV_SNAPSHOT)

    def uptodate_count(self) -> int:
        """Live nodes holding an up-to-date value: the last completed
        propagation's (value, tag), or any ongoing propagation's with a tag
        at least as large."""
        last = self.last_completed_prop_tag
        fresh = {t for t in self.ongoing_props.values() if t >= last}
        fresh.add(last)
        return sum(1 for st in self.pop.live.values()
                   if st.val is not ABSENT and st.tag in fresh)


def churn_tick(pop: Population, cfg: ExperimentConfig, rng: random.Random,
               on_depart=None, on_join=None) -> int:
    """Replace a churn fraction of the population: floor(c*n) uniformly
    chosen live nodes (plus one more with the fractional probability, so
    the expectation is exactly c*n) leave and the same number of fresh
    nodes join. Returns the replacement count."""
    expected = cfg.c * pop.n
    count = int(expected)
    frac = expected - count
    if frac > 0 and rng.random() < frac:
        count += 1
    count = min(count, len(pop.live_ids))
    if count == 0:
        return 0
    victims = rng.sample(pop.live_ids, count)
    for victim in victims:
        pop.remove(victim)
        if on_depart is not None:
            on_depart(victim)
    donors_pool = pop.live_ids
    for _ in range(count):
        state = pop.fresh_state()
        if cfg.membership_mode == CYCLON and donors_pool:
            fanout = min(cfg.bootstrap_fanout, len(donors_pool))
            donor_ids = rng.sample(donors_pool, fanout)
            state.view = bootstrap_view(state.me, cfg.view_size,
                                        [pop.live[d].view for d in donor_ids], rng)
        pop.add(state)
        if on_join is not None:
            on_join(state.me)
    return count


def run(cfg: ExperimentConfig) -> TraceBundle:
    """Run one experiment to completion and return its trace bundle."""
    sim = Simulation(cfg)
    return sim.run()
