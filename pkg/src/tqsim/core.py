"""Value types shared by the whole stack: node identities, version tags,
object values and wire messages.

Everything here is an immutable value; instances can be copied and shared
freely between nodes, the simulator and the analysis code.
"""
from __future__ import annotations

from typing import NamedTuple, Optional

NodeId = int

# Identifier 0 is reserved for the id field of the initial tag and is never
# assigned to a live node.
RESERVED_ID: NodeId = 0

# The absent object value (a node that has never been reached by any
# propagation holds this together with the initial tag).
ABSENT = None


class Tag(NamedTuple):
    """Version stamp: (counter, node id), ordered lexicographically.

    Tuple ordering gives the total order directly: counters dominate and
    node ids break ties.
    """

    counter: int
    id: NodeId

    def render(self) -> str:
        """Canonical textual form used in traces and CSV: "counter.id"."""
        return f"{self.counter}.{self.id}"

    @classmethod
    def parse(cls, text: str) -> "Tag":
        counter, _, node = text.partition(".")
        return cls(int(counter), int(node))


INITIAL_TAG = Tag(0, RESERVED_ID)

LESS, EQUAL, GREATER = -1, 0, 1


def tag_compare(a: Tag, b: Tag) -> int:
    """Compare two tags; returns LESS, EQUAL or GREATER."""
    if a == b:
        return EQUAL
    return LESS if a < b else GREATER


def tag_advance(consulted: Tag, writer: NodeId) -> Tag:
    """Tag for a new write: bump the consulted counter, stamp the writer id.

    Strictly greater than `consulted` for any writer because the counter
    increases.
    """
    return Tag(consulted.counter + 1, writer)


# Message kinds. CONS/PROP disseminate down the tree, RESP flows back to the
# client that started the phase.
CONS, PROP, RESP = 0, 1, 2
KIND_NAMES = {CONS: "CONS", PROP: "PROP", RESP: "RESP"}


class Message(NamedTuple):
    """Wire unit of the protocol.

    `client` is the node that started the phase; RESP messages carry None
    there (the field is preserved for wire fidelity but never read).
    `sender` is the node the message came from, used for forwarding
    exclusions and responder accounting.
    """

    kind: int
    value: object
    tag: Tag
    ttl: int
    client: Optional[NodeId]
    sn: int
    sender: NodeId


class PhaseKey(NamedTuple):
    """Identity of one dissemination phase: the client plus its sequence
    number. Sequence numbers alone collide across concurrent clients, so
    all marked/received bookkeeping is keyed on the pair."""

    client: NodeId
    sn: int
