"""Routing backbone: deliver messages by destination public key.

Resource-rich backbone nodes partition the space of routing bytes (the
first ``x`` bytes of a public key) through a shared table. Regular nodes
join the backbone responsible for each of their keys with a signed join
message, and any message addressed to a key travels origin -> entry
backbone -> responsible backbone -> destination endpoint, at most three
hops over the full-mesh backbone.

Widening ``x`` rebuilds the table at finer granularity. When a load
histogram from the overloaded window is supplied, the new ranges are cut
so observed traffic spreads evenly and the overloaded node takes the
slimmest slice; without one the space is split evenly by value. Either
way the result is a total, disjoint partition, and skewed key
populations can defeat the balancing, which callers surface as a metric
rather than an error.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from .crypto import KeyPair, PublicKey, Signature, sign, verify
from .transactions import (
    DecodeError,
    NegotiationMsg,
    TAG_NEGOTIATION,
    decode_canonical,
)


def negotiation_round(payload) -> Optional[int]:
    """Round counter of a negotiation payload (object or canonical bytes)."""
    if isinstance(payload, NegotiationMsg):
        return payload.round
    if isinstance(payload, (bytes, bytearray)) and payload[:1] == bytes([TAG_NEGOTIATION]):
        try:
            return decode_canonical(bytes(payload)).round
        except DecodeError:
            return None
    return None


def routing_value(pk: PublicKey, x: int) -> int:
    """Integer value of the first ``x`` bytes of a public key."""
    return int.from_bytes(pk[:x], "big")


@dataclass(frozen=True)
class DHTTable:
    """Total, disjoint assignment of routing-byte values to backbone nodes.

    ``bounds[i]`` is the first value of range i; range i covers
    [bounds[i], bounds[i+1]) with the last range ending at 256**x.
    """

    x: int
    bounds: Tuple[int, ...]
    owners: Tuple[str, ...]
    version: int = 0

    @property
    def space(self) -> int:
        return 1 << (8 * self.x)

    def owner_of_value(self, value: int) -> str:
        idx = bisect_right(self.bounds, value) - 1
        return self.owners[idx]

    def owner_of(self, pk: PublicKey) -> str:
        return self.owner_of_value(routing_value(pk, self.x))

    def ranges(self) -> List[Tuple[int, int, str]]:
        """(first value, last value, owner) triples covering the space."""
        out = []
        for i, owner in enumerate(self.owners):
            lo = self.bounds[i]
            hi = (self.bounds[i + 1] if i + 1 < len(self.bounds) else self.space) - 1
            out.append((lo, hi, owner))
        return out

    def value_share(self, node_id: str) -> int:
        """How many routing-byte values the node owns."""
        return sum(hi - lo + 1 for lo, hi, owner in self.ranges() if owner == node_id)


def build_dht(backbone_ids: List[str], x: int) -> DHTTable:
    """Split the routing-byte space into equal contiguous ranges.

    Range sizes differ by at most one; assignment follows sorted node ids,
    so the table is deterministic for fixed inputs.
    """
    if not backbone_ids:
        raise ValueError("at least one backbone node required")
    if x < 1:
        raise ValueError("x must be >= 1")
    ids = sorted(backbone_ids)
    space = 1 << (8 * x)
    n = len(ids)
    base, extra = divmod(space, n)
    bounds = []
    cursor = 0
    for i in range(n):
        bounds.append(cursor)
        cursor += base + (1 if i < extra else 0)
    return DHTTable(x=x, bounds=tuple(bounds), owners=tuple(ids), version=0)


def rebalance(
    table: DHTTable,
    new_x: int,
    load_by_value: Optional[Mapping[int, int]] = None,
    overloaded: Optional[str] = None,
) -> Tuple[DHTTable, List[Tuple[int, int, str, str]]]:
    """Widen the routing prefix and return (new table, ownership diff).

    ``load_by_value`` maps observed new-granularity values to message
    counts; when given, range cuts equalize observed load and the
    ``overloaded`` node is handed the range owning the fewest values.
    The diff lists (lo, hi, old_owner, new_owner) for every stretch of
    values that changed hands.
    """
    if new_x <= table.x:
        raise ValueError(f"new_x {new_x} must exceed current x {table.x}")
    ids = sorted(table.owners)
    n = len(ids)
    space = 1 << (8 * new_x)
    if not load_by_value:
        new_table = build_dht(ids, new_x)
        new_table = DHTTable(
            x=new_x, bounds=new_table.bounds, owners=new_table.owners,
            version=table.version + 1,
        )
        return new_table, _ownership_diff(table, new_table)

    total = sum(load_by_value.values())
    hot_values = sorted(load_by_value)
    bounds = [0]
    acc = 0
    vi = 0
    for i in range(1, n):
        target = total * i / n
        while vi < len(hot_values) and acc + load_by_value[hot_values[vi]] <= target:
            acc += load_by_value[hot_values[vi]]
            vi += 1
        cut = hot_values[vi] if vi < len(hot_values) else space
        # keep cuts strictly increasing so every node owns a nonempty range
        cut = max(cut, bounds[-1] + 1)
        cut = min(cut, space - (n - i))
        bounds.append(cut)

    # the overloaded node gets the slimmest slice; others follow in id order
    sizes = []
    for i in range(n):
        hi = bounds[i + 1] if i + 1 < n else space
        sizes.append((hi - bounds[i], i))
    owners: List[Optional[str]] = [None] * n
    remaining = list(ids)
    if overloaded is not None and overloaded in remaining:
        slim = min(sizes)[1]
        owners[slim] = overloaded
        remaining.remove(overloaded)
    for i in range(n):
        if owners[i] is None:
            owners[i] = remaining.pop(0)
    new_table = DHTTable(
        x=new_x, bounds=tuple(bounds), owners=tuple(owners),
        version=table.version + 1,
    )
    return new_table, _ownership_diff(table, new_table)


def _ownership_diff(old: DHTTable, new: DHTTable) -> List[Tuple[int, int, str, str]]:
    """Stretches of new-granularity values whose owner changed."""
    shift = 8 * (new.x - old.x)
    edges = sorted(
        {0, new.space}
        | set(new.bounds)
        | {b << shift for b in old.bounds}
    )
    moved = []
    for lo, hi in zip(edges, edges[1:]):
        before = old.owner_of_value(lo >> shift)
        after = new.owner_of_value(lo)
        if before != after:
            moved.append((lo, hi - 1, before, after))
    return moved


# ---------------------------------------------------------------------------
# join messages


@dataclass(frozen=True)
class JoinMessage:
    """Signed request to associate a public key with an endpoint."""

    pk: PublicKey
    endpoint: str
    sign: Signature

    def _payload(self) -> bytes:
        return self.pk + self.endpoint.encode()

    def verify_signature(self) -> bool:
        return verify(self.pk, self._payload(), self.sign)


def make_join(keypair: KeyPair, endpoint: str) -> JoinMessage:
    msg = JoinMessage(pk=keypair.public, endpoint=endpoint, sign=b"")
    payload = msg._payload()
    return JoinMessage(pk=keypair.public, endpoint=endpoint, sign=sign(keypair, payload))


# ---------------------------------------------------------------------------
# backbone nodes and the mesh


@dataclass
class Delivery:
    """Outcome of routing one payload."""

    delivered: bool
    trace: List[str]
    endpoint: Optional[str] = None
    reason: Optional[str] = None


class BackboneNode:
    """One overlay router: member table, traffic window, mesh links."""

    def __init__(self, node_id: str, offer_limit: int, window: int = 50):
        self.node_id = node_id
        self.offer_limit = offer_limit
        self.window = window
        self.members: Dict[PublicKey, str] = {}
        self.handled: int = 0  # lifetime messages this node was responsible for
        self.recent: List[Tuple[int, PublicKey]] = []  # (tick, dest pk) in window

    def join(self, msg: JoinMessage, table: DHTTable) -> Tuple[bool, Optional[str]]:
        """Admit a member; forged or misrouted joins are refused."""
        if not msg.verify_signature():
            return False, "impersonation"
        if table.owner_of(msg.pk) != self.node_id:
            return False, "misrouted join"
        self.members[msg.pk] = msg.endpoint
        return True, None

    def note_traffic(self, dest_pk: PublicKey, now: int) -> None:
        self.handled += 1
        self.recent.append((now, dest_pk))
        cutoff = now - self.window
        while self.recent and self.recent[0][0] <= cutoff:
            self.recent.pop(0)

    def window_load(self) -> int:
        return len(self.recent)

    def window_histogram(self, x: int) -> Dict[int, int]:
        """Observed per-value traffic at ``x``-byte granularity."""
        hist: Dict[int, int] = {}
        for _, pk in self.recent:
            v = routing_value(pk, x)
            hist[v] = hist.get(v, 0) + 1
        return hist


class Mesh:
    """Full mesh of backbone nodes sharing one table version.

    Stands in for conventional inter-router protocols: any backbone
    reaches any other in a single hop.
    """

    def __init__(self, backbone_ids: List[str], x: int, offer_limit: int, window: int = 50):
        self.table = build_dht(backbone_ids, x)
        self.nodes: Dict[str, BackboneNode] = {
            node_id: BackboneNode(node_id, offer_limit, window)
            for node_id in backbone_ids
        }

    def node(self, node_id: str) -> BackboneNode:
        return self.nodes[node_id]

    def responsible(self, pk: PublicKey) -> BackboneNode:
        return self.nodes[self.table.owner_of(pk)]

    def join(self, node_id: str, msg: JoinMessage) -> Tuple[bool, Optional[str]]:
        return self.nodes[node_id].join(msg, self.table)

    def route(
        self,
        origin: str,
        entry_node_id: str,
        dest_pk: PublicKey,
        payload: object,
        now: int = 0,
    ) -> Delivery:
        """Carry a payload from an origin endpoint to the owner of dest_pk.

        Trace is origin, entry backbone, responsible backbone (skipped if
        identical), destination endpoint. Negotiation payloads past the
        offer limit are dropped at the responsible backbone.
        """
        trace = [origin, entry_node_id]
        responsible_id = self.table.owner_of(dest_pk)
        if responsible_id != entry_node_id:
            trace.append(responsible_id)
        node = self.nodes[responsible_id]
        node.note_traffic(dest_pk, now)
        round_counter = negotiation_round(payload)
        if round_counter is not None and round_counter > node.offer_limit:
            return Delivery(False, trace, reason="offer limit exceeded")
        endpoint = node.members.get(dest_pk)
        if endpoint is None:
            return Delivery(False, trace, reason="undeliverable")
        trace.append(endpoint)
        return Delivery(True, trace, endpoint=endpoint)

    def widen(
        self,
        new_x: int,
        load_by_value: Optional[Mapping[int, int]] = None,
        overloaded: Optional[str] = None,
    ) -> List[Tuple[PublicKey, str, str]]:
        """Install a wider table and re-home members; returns the move plan."""
        new_table, _ = rebalance(self.table, new_x, load_by_value, overloaded)
        plan = []
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            for pk in sorted(node.members):
                new_owner = new_table.owner_of(pk)
                if new_owner != node_id:
                    plan.append((pk, node_id, new_owner))
        for pk, old_id, new_id in plan:
            endpoint = self.nodes[old_id].members.pop(pk)
            self.nodes[new_id].members[pk] = endpoint
        self.table = new_table
        return plan
