"""Per-node protocol state machine.

A client runs each read or write as two dissemination phases: a
consultation that collects the highest (value, tag) from a quorum of q
distinct nodes, then a propagation that installs a (value, tag) at q
distinct nodes. Every node also runs the participate handler, reacting to
CONS/PROP messages by serving or adopting state, answering the client with
a RESP, and forwarding down a k-ary tree bounded by a ttl; messages seen
twice are passed along to one fresh neighbor without spending ttl.

This module is engine-agnostic: handlers mutate a single NodeState and
return the messages to send. The simulator (or a real transport) owns
delivery, timing, retries and timeouts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .core import ABSENT, CONS, INITIAL_TAG, Message, NodeId, PROP, PhaseKey, RESP, Tag, tag_advance
from .membership import Sampler, View

READ, WRITE = "read", "write"

# How stale propagations are absorbed:
#   literal   — adopt the incoming (value, tag) unconditionally, as written;
#   monotonic — adopt only when the incoming tag is newer, so a replica's
#               tag never goes backwards.
LITERAL, MONOTONIC = "literal", "monotonic"

EMPTY = frozenset()


@dataclass(frozen=True)
class ProtocolParams:
    q: int
    k: int
    ell: int                      # dissemination depth; initial ttl
    prop_adoption: str = MONOTONIC
    dup_hop_cap: int = 0          # 0 -> default 4*ell*k

    def cap(self) -> int:
        return self.dup_hop_cap if self.dup_hop_cap > 0 else 4 * self.ell * self.k


@dataclass
class NodeState:
    """Replica state of one node incarnation."""

    me: NodeId
    val: object = ABSENT
    tag: Tag = INITIAL_TAG
    sn: int = 0
    marked: set = field(default_factory=set)           # PhaseKeys participated in
    sent_to_nbrs1: set = field(default_factory=set)    # client fan-out bookkeeping
    sent_to_nbrs2: dict = field(default_factory=dict)  # PhaseKey -> participant fan-out targets
    rcvd_from_qnodes: dict = field(default_factory=dict)  # PhaseKey -> distinct responders
    view: Optional[View] = None
    active_phase: Optional[PhaseKey] = None
    max_written_counter: int = 0   # floor keeping this node's write tags unique


# One send: (target, message, dup_hops carried by the simulator envelope).
Send = tuple


class Participation(NamedTuple):
    """Outcome of handling one delivered message."""

    sends: list
    marked_key: Optional[PhaseKey]  # set when this was a first-time participation
    depth: int                      # hop depth of that participation (ell - ttl + 1)
    resp_key: Optional[PhaseKey]    # set when a RESP was counted for an open phase
    late_resp: bool
    dup_capped: bool


def start_phase(st: NodeState, kind: int, value: object, tag: Tag,
                sampler: Sampler, pp: ProtocolParams) -> tuple[PhaseKey, list, bool]:
    """Open a new phase at a client: bump sn, fan the phase message out to
    k sampled neighbors at full ttl. Returns (key, sends, degraded) where
    degraded flags a fan-out that found fewer than k targets."""
    st.sn += 1
    key = PhaseKey(st.me, st.sn)
    st.active_phase = key
    st.rcvd_from_qnodes[key] = set()
    sends, degraded = _fan_out(st, kind, value, tag, pp.ell, key, sampler, pp.k)
    st.sent_to_nbrs1 = set()
    return key, sends, degraded


def refan_phase(st: NodeState, key: PhaseKey, kind: int, value: object,
                tag: Tag, sampler: Sampler, pp: ProtocolParams) -> tuple[list, bool]:
    """Re-issue a phase's fan-out (same key, fresh neighbors, full ttl);
    the client does this periodically until enough distinct responders
    arrive or the operation times out."""
    sends, degraded = _fan_out(st, kind, value, tag, pp.ell, key, sampler, pp.k)
    st.sent_to_nbrs1 = set()
    return sends, degraded


def _fan_out(st, kind, value, tag, ttl, key, sampler, k):
    targets = sampler(k, EMPTY)
    st.sent_to_nbrs1 = set(targets)
    msg = Message(kind, value, tag, ttl, key.client, key.sn, st.me)
    return [(t, msg, 0) for t in targets], len(targets) < k


def phase_poll(st: NodeState, key: PhaseKey, q: int) -> bool:
    """A phase is complete once q distinct nodes have responded to it."""
    got = st.rcvd_from_qnodes.get(key)
    return got is not None and len(got) >= q


def close_phase(st: NodeState, key: PhaseKey) -> frozenset:
    """Retire a phase at its client; returns the responder set. Later
    RESPs for it are ignored as late."""
    if st.active_phase == key:
        st.active_phase = None
    return frozenset(st.rcvd_from_qnodes.pop(key, EMPTY))


def participate(st: NodeState, msg: Message, dup_hops: int,
                sampler: Sampler, pp: ProtocolParams) -> Participation:
    """React to one delivered message (the passive side of the protocol)."""
    if msg.kind == RESP:
        key = PhaseKey(st.me, msg.sn)
        if st.active_phase != key:
            return Participation((), None, 0, None, True, False)
        if st.tag < msg.tag:
            st.val, st.tag = msg.value, msg.tag
        st.rcvd_from_qnodes[key].add(msg.sender)
        return Participation((), None, 0, key, False, False)

    key = PhaseKey(msg.client, msg.sn)
    if key in st.marked:
        # Already participated: hand the message to one fresh neighbor with
        # the ttl untouched, so the dissemination keeps finding new nodes.
        # The envelope hop budget stops it from circulating forever.
        if dup_hops >= pp.cap():
            return Participation((), None, 0, None, False, True)
        target = sampler(1, frozenset((msg.sender,)))
        sends = [(target[0], msg, dup_hops + 1)] if target else []
        return Participation(sends, None, 0, None, False, False)

    st.marked.add(key)
    depth = pp.ell - msg.ttl + 1
    if msg.kind == CONS:
        fwd_value, fwd_tag = st.val, st.tag
    else:  # PROP
        if pp.prop_adoption == LITERAL or st.tag < msg.tag:
            st.val, st.tag = msg.value, msg.tag
        fwd_value, fwd_tag = msg.value, msg.tag

    sends = []
    new_ttl = msg.ttl - 1
    if new_ttl > 0:
        targets = sampler(pp.k, frozenset((msg.sender,)))
        st.sent_to_nbrs2[key] = set(targets)
        fwd = Message(msg.kind, fwd_value, fwd_tag, new_ttl, msg.client, msg.sn, st.me)
        sends.extend((t, fwd, 0) for t in targets)
    resp = Message(RESP, st.val, st.tag, max(new_ttl, 0), None, msg.sn, st.me)
    sends.append((msg.client, resp, 0))
    return Participation(sends, key, depth, None, False, False)


@dataclass
class PhaseOutcome:
    """What one completed (or abandoned) phase produced, plus its cost."""

    value: object
    tag: Optional[Tag]
    responders: frozenset
    messages_sent: int
    max_depth_observed: int
    completed: bool
    elapsed: float


class OpDriver:
    """Client-side two-phase operation: consult, then propagate.

    The simulator calls `begin` once and `consult_complete` when the first
    phase reaches q responders; each returns the phase to open. Results are
    read off the driver after the propagation completes.
    """

    __slots__ = ("op_id", "kind", "value", "consulted", "propagated", "returned")

    def __init__(self, op_id: int, kind: str, value: object = None):
        self.op_id = op_id
        self.kind = kind
        self.value = value
        self.consulted = None   # (value, tag) gathered by the consultation
        self.propagated = None  # (value, tag) installed by the propagation
        self.returned = None

    def begin(self, st: NodeState, sampler: Sampler, pp: ProtocolParams):
        # The consultation carries the client's own state; participants
        # overwrite the payload with theirs, and the client accumulates the
        # maximum through the RESPs.
        return start_phase(st, CONS, st.val, st.tag, sampler, pp)

    def consult_complete(self, st: NodeState, sampler: Sampler, pp: ProtocolParams):
        # The client's local state now reflects every RESP of the phase.
        self.consulted = (st.val, st.tag)
        if self.kind == WRITE:
            # Counter floor: a writer never reuses a counter it already
            # stamped, even if stale propagations rolled its replica back.
            floor = max(st.tag.counter, st.max_written_counter)
            new_tag = tag_advance(Tag(floor, st.tag.id), st.me)
            st.max_written_counter = new_tag.counter
            st.val, st.tag = self.value, new_tag
            self.propagated = (self.value, new_tag)
            self.returned = self.consulted
        else:
            self.propagated = self.consulted
            self.returned = self.consulted
        value, tag = self.propagated
        return start_phase(st, PROP, value, tag, sampler, pp)
