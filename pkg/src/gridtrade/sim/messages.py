"""Payload types carried between simulated actors.

Backbone-routed payloads travel as canonical bytes, exactly as they would
on a real wire: transactions and negotiation messages use their canonical
encoding, verification requests and endorsements use the meter encodings,
and pings get a one-byte tag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

from ..arb import JoinMessage
from ..crypto import PublicKey
from ..ledger import Block, ProducerClaim
from ..meter import TAG_COE, TAG_VERIFICATION_REQUEST, CoE, VerificationRequest
from ..transactions import Transaction, decode_canonical, encode_canonical

TAG_PING = 0x32


@dataclass
class TxGossip:
    """A transaction broadcast to every network participant."""

    tx: Transaction


@dataclass
class ClaimGossip:
    claim: ProducerClaim


@dataclass
class BlockGossip:
    block: Block


@dataclass
class JoinRequest:
    join: JoinMessage
    reply_to: str


@dataclass
class JoinAck:
    pk: PublicKey
    accepted: bool
    reason: Optional[str] = None


@dataclass
class Ping:
    """Opaque routed traffic used by load scenarios."""

    data: bytes


RoutablePayload = Union[Transaction, VerificationRequest, CoE, Ping]


def encode_routed_payload(payload: RoutablePayload) -> bytes:
    if isinstance(payload, (VerificationRequest, CoE)):
        return payload.to_bytes()
    if isinstance(payload, Ping):
        return bytes([TAG_PING]) + payload.data
    return encode_canonical(payload)


def decode_routed_payload(data: bytes) -> RoutablePayload:
    tag = data[0]
    if tag == TAG_VERIFICATION_REQUEST:
        return VerificationRequest.from_bytes(data)
    if tag == TAG_COE:
        return CoE.from_bytes(data)
    if tag == TAG_PING:
        return Ping(data[1:])
    return decode_canonical(data)


@dataclass
class Routed:
    """Envelope moving hop by hop across the backbone toward a public key."""

    dest_pk: PublicKey
    payload: bytes
    origin: str
    trace: List[str] = field(default_factory=list)
    hops: int = 0
