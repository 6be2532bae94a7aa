"""Peer sampling: per-node neighbor views with ages, shuffled by exchanging
whole views with the oldest neighbor, plus the samplers the protocol layer
draws dissemination targets from.

Two sampling modes exist. View sampling draws from the node's shuffled
view (the deployable mode). Perfect sampling draws uniformly from all live
nodes, which is the idealized regime the probability bounds assume; the
acceptance experiments run under it.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .core import NodeId

# A sampler takes (count, exclude) and returns up to `count` distinct node
# ids not in `exclude`. Fewer than `count` means the pool ran short.
Sampler = Callable[[int, frozenset], list]


@dataclass(frozen=True)
class NeighborEntry:
    id: NodeId
    age: int  # membership cycles since last heard


@dataclass
class View:
    """One node's neighbor list: at most `limit` entries, never the owner
    itself, no duplicate ids."""

    owner: NodeId
    limit: int
    entries: list = field(default_factory=list)

    def ids(self) -> list:
        return [e.id for e in self.entries]


def shuffle_initiate(view: View) -> Optional[tuple[NodeId, list]]:
    """Pick the shuffle target and the entries to offer it.

    The target is the oldest neighbor (ties broken by smaller id, so runs
    replay deterministically); the offer is a copy of the view minus the
    target's own entry. Returns None for an empty view (isolated node).
    """
    if not view.entries:
        return None
    target = max(view.entries, key=lambda e: (e.age, -e.id)).id
    offer = [e for e in view.entries if e.id != target]
    return target, offer


def merge_received(view: View, received: Iterable[NeighborEntry]) -> View:
    """Fold a received entry batch into a view: received entries first with
    ages reset to zero, then the old entries, dropping the owner and
    duplicate ids (first occurrence wins) and truncating to the limit."""
    merged: list = []
    seen = set()
    for e in received:
        if e.id == view.owner or e.id in seen:
            continue
        seen.add(e.id)
        merged.append(NeighborEntry(e.id, 0))
        if len(merged) == view.limit:
            return View(view.owner, view.limit, merged)
    for e in view.entries:
        if e.id == view.owner or e.id in seen:
            continue
        seen.add(e.id)
        merged.append(e)
        if len(merged) == view.limit:
            break
    return View(view.owner, view.limit, merged)


def shuffle_receive(view: View, offer: Sequence[NeighborEntry],
                    from_id: NodeId) -> tuple[list, View]:
    """Handle an incoming shuffle: reply with our entries minus any pointer
    to the initiator, then merge the offered entries into our view."""
    reply = [e for e in view.entries if e.id != from_id]
    return reply, merge_received(view, offer)


def age_tick(view: View, age_limit: int) -> View:
    """Advance all ages by one cycle; entries older than `age_limit` are
    presumed failed and dropped."""
    kept = [NeighborEntry(e.id, e.age + 1)
            for e in view.entries if e.age + 1 <= age_limit]
    return View(view.owner, view.limit, kept)


def sample_neighbors(view: View, count: int, exclude: frozenset,
                     rng: random.Random) -> list:
    """Uniform distinct neighbor ids from the view minus `exclude`; returns
    everything available when the pool is smaller than `count`."""
    pool = [e.id for e in view.entries if e.id not in exclude]
    if len(pool) <= count:
        return pool
    return rng.sample(pool, count)


def bootstrap_view(owner: NodeId, limit: int, donors: Sequence[View],
                   rng: random.Random) -> View:
    """View for a joining node, assembled from the views of one or more
    live donors (the join protocol itself is out of scope; a joiner simply
    copies what its introducers know)."""
    pool: dict = {}
    for donor in donors:
        for e in donor.entries:
            if e.id != owner and e.id not in pool:
                pool[e.id] = e
        if donor.owner != owner and donor.owner not in pool:
            pool[donor.owner] = NeighborEntry(donor.owner, 0)
    entries = list(pool.values())
    rng.shuffle(entries)
    return View(owner, limit, entries[:limit])


class PerfectSampler:
    """Uniform sampling over all live nodes, bypassing views.

    `live_ids` is the simulator's live-node list, shared by reference so
    churn is visible immediately. The owner is always excluded, mirroring
    the no-self view invariant.
    """

    def __init__(self, live_ids: list, rng: random.Random):
        self._live = live_ids
        self._rng = rng

    def for_node(self, owner: NodeId) -> Sampler:
        live = self._live
        rng = self._rng

        def sample(count: int, exclude: frozenset) -> list:
            skip = len(exclude) + 1
            if len(live) <= count + skip:
                return [i for i in live
                        if i != owner and i not in exclude][:count]
            picked = rng.sample(live, count + skip)
            out = [i for i in picked if i != owner and i not in exclude]
            return out[:count]

        return sample


class ViewSampler:
    """Sampling from each node's current membership view."""

    def __init__(self, states: dict, rng: random.Random):
        self._states = states  # NodeId -> object with a .view attribute
        self._rng = rng

    def for_node(self, owner: NodeId) -> Sampler:
        states = self._states
        rng = self._rng

        def sample(count: int, exclude: frozenset) -> list:
            st = states.get(owner)
            if st is None or st.view is None:
                return []
            return sample_neighbors(st.view, count, exclude, rng)

        return sample
