"""Smart-meter model: anonymous attestation and receipt generation.

Every meter ships with a manufacturer-certified key pair. To sign receipts
without linking them to itself, a meter builds a pool of one-time keys,
commits to them in a Merkle tree, and has a randomly chosen peer meter
(the verifier) sign the root after checking the requester's manufacturer
certificate. That signed root travels with every receipt; the receipt key
is proven to be a tree leaf, and each leaf is spent at most once.

The meter is assumed tamper resistant: it records delivered energy against
a registered contract and will only emit a receipt once the contracted
amount has fully arrived.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Optional, Set

from .crypto import (
    AsymCiphertext,
    Certificate,
    HashDigest,
    KeyPair,
    MerkleTree,
    PublicKey,
    Signature,
    asym_decrypt,
    asym_encrypt,
    ca_verify,
    DecryptionError,
    issue_certificate,
    merkle_build,
    merkle_prove,
    sign,
    verify,
)
from .transactions import CTPTx, ContractTerms, ERCTx, make_erc

TAG_VERIFICATION_REQUEST = 0x30
TAG_COE = 0x31


class MeterError(Exception):
    """A meter refused an operation (incomplete delivery, spent pool, ...)."""


def _lp(value: bytes) -> bytes:
    return len(value).to_bytes(4, "big") + value


def _read_fields(data: bytes, expected_tag: int, count: int):
    if not data or data[0] != expected_tag:
        raise ValueError(f"expected tag {expected_tag}, got {data[:1]!r}")
    fields = []
    off = 1
    for _ in range(count):
        if off + 4 > len(data):
            raise ValueError("truncated field length")
        n = int.from_bytes(data[off : off + 4], "big")
        off += 4
        if off + n > len(data):
            raise ValueError("field runs past end")
        fields.append(data[off : off + n])
        off += n
    if off != len(data):
        raise ValueError("trailing bytes")
    return fields


@dataclass(frozen=True)
class MeterIdentity:
    """Manufacturer-issued identity: key pair plus certificate over it."""

    keypair: KeyPair
    manufacturer_cert: Certificate

    @property
    def public(self) -> PublicKey:
        return self.keypair.public


def provision_meter(manufacturer: KeyPair, rng: Random) -> MeterIdentity:
    """Factory step: mint a meter key pair and certify it."""
    keypair = KeyPair.generate(rng)
    return MeterIdentity(
        keypair=keypair, manufacturer_cert=issue_certificate(manufacturer, keypair.public)
    )


@dataclass
class KeyPool:
    """One-time receipt keys committed by a Merkle tree over their publics."""

    pairs: List[KeyPair]
    tree: MerkleTree
    used: Set[int] = field(default_factory=set)

    @property
    def root(self) -> HashDigest:
        return self.tree.root

    def next_unused(self) -> Optional[int]:
        for i in range(len(self.pairs)):
            if i not in self.used:
                return i
        return None


@dataclass(frozen=True)
class CoE:
    """A verifier meter's endorsement of a key-pool root.

    Carries everything a validator needs: the root, the verifier's
    signature over it, and the verifier's manufacturer certificate.
    """

    root: HashDigest
    vm_signature: Signature
    vm_pk: PublicKey
    vm_cert: Certificate

    def verify(self, manufacturer_ca_pk: PublicKey) -> bool:
        if not ca_verify(self.vm_cert, manufacturer_ca_pk):
            return False
        if self.vm_cert.subject_pk != self.vm_pk:
            return False
        return verify(self.vm_pk, self.root, self.vm_signature)

    def to_bytes(self) -> bytes:
        return bytes([TAG_COE]) + b"".join(
            [_lp(self.root), _lp(self.vm_signature), _lp(self.vm_pk),
             _lp(self.vm_cert.to_bytes())]
        )

    @staticmethod
    def from_bytes(data: bytes) -> "CoE":
        root, vm_signature, vm_pk, cert = _read_fields(data, TAG_COE, 4)
        return CoE(
            root=root,
            vm_signature=vm_signature,
            vm_pk=vm_pk,
            vm_cert=Certificate.from_bytes(cert),
        )


@dataclass(frozen=True)
class VerificationRequest:
    """Root endorsement request routed to the chosen verifier meter."""

    encrypted_root: AsymCiphertext
    requester_mpk: PublicKey
    requester_cert: Certificate
    sign: Signature

    def _payload(self) -> bytes:
        return self.encrypted_root.to_bytes() + self.requester_mpk

    def verify_signature(self) -> bool:
        return verify(self.requester_mpk, self._payload(), self.sign)

    def to_bytes(self) -> bytes:
        return bytes([TAG_VERIFICATION_REQUEST]) + b"".join(
            [_lp(self.encrypted_root.to_bytes()), _lp(self.requester_mpk),
             _lp(self.requester_cert.to_bytes()), _lp(self.sign)]
        )

    @staticmethod
    def from_bytes(data: bytes) -> "VerificationRequest":
        ct, mpk, cert, signature = _read_fields(data, TAG_VERIFICATION_REQUEST, 4)
        return VerificationRequest(
            encrypted_root=AsymCiphertext.from_bytes(ct),
            requester_mpk=mpk,
            requester_cert=Certificate.from_bytes(cert),
            sign=signature,
        )


@dataclass
class DeliveryRecord:
    """Energy received so far against one contract."""

    contract_hash: HashDigest
    contracted_kwh: int
    delivered: int = 0

    @property
    def complete(self) -> bool:
        return self.delivered >= self.contracted_kwh


class SmartMeter:
    """Stateful meter actor: key pools, endorsements, delivery, receipts."""

    def __init__(self, identity: MeterIdentity, rng: Random):
        self.identity = identity
        self.rng = rng
        self.pool: Optional[KeyPool] = None
        self.coe: Optional[CoE] = None
        self.records: Dict[HashDigest, DeliveryRecord] = {}
        self.contracts: Dict[HashDigest, tuple] = {}  # contract_hash -> (terms, ctp)

    @property
    def public(self) -> PublicKey:
        return self.identity.public

    # -- key pool and endorsement -------------------------------------------

    def generate_key_pool(self, n: int) -> KeyPool:
        """Mint ``n`` one-time pairs; pool size sets the anonymity level."""
        if n < 1:
            raise ValueError("pool needs at least one key")
        pairs = []
        for _ in range(n):
            pair = KeyPair.generate(self.rng)
            while pair.public == self.identity.public:
                pair = KeyPair.generate(self.rng)
            pairs.append(pair)
        tree = merkle_build([p.public for p in pairs])
        self.pool = KeyPool(pairs=pairs, tree=tree)
        return self.pool

    def make_verification_request(
        self, pool: KeyPool, vm_pk: PublicKey
    ) -> VerificationRequest:
        """Encrypt the pool root to the verifier and sign the request."""
        ct = asym_encrypt(vm_pk, pool.root, self.rng)
        vr = VerificationRequest(
            encrypted_root=ct,
            requester_mpk=self.identity.public,
            requester_cert=self.identity.manufacturer_cert,
            sign=b"",
        )
        signature = sign(self.identity.keypair, vr._payload())
        return VerificationRequest(
            encrypted_root=ct,
            requester_mpk=self.identity.public,
            requester_cert=self.identity.manufacturer_cert,
            sign=signature,
        )

    def process_verification_request(
        self, vr: VerificationRequest, manufacturer_ca_pk: PublicKey
    ) -> CoE:
        """Verifier side: check the requester is a real meter, sign the root.

        Raises MeterError for uncertified requesters, bad signatures, or
        ciphertext not addressed to this meter.
        """
        if not ca_verify(vr.requester_cert, manufacturer_ca_pk):
            raise MeterError("not a meter")
        if vr.requester_cert.subject_pk != vr.requester_mpk:
            raise MeterError("certificate does not match requester")
        if not vr.verify_signature():
            raise MeterError("bad request signature")
        try:
            root = asym_decrypt(self.identity.keypair, vr.encrypted_root)
        except DecryptionError as exc:
            raise MeterError("cannot decrypt root") from exc
        return CoE(
            root=root,
            vm_signature=sign(self.identity.keypair, root),
            vm_pk=self.identity.public,
            vm_cert=self.identity.manufacturer_cert,
        )

    def install_coe(self, coe: CoE) -> None:
        self.coe = coe

    # -- delivery tracking ------------------------------------------------------

    def register_contract(self, terms: ContractTerms, ctp: CTPTx) -> None:
        """Arm the meter for a trade: it now tracks delivery for this contract."""
        self.contracts[ctp.contract_hash] = (terms, ctp)
        self.records.setdefault(
            ctp.contract_hash,
            DeliveryRecord(contract_hash=ctp.contract_hash, contracted_kwh=terms.energy_amount),
        )

    def record_delivery(self, contract_hash: HashDigest, kwh: int) -> DeliveryRecord:
        """Accumulate received energy; flips complete at the contracted amount."""
        if kwh < 0:
            raise ValueError("kwh must be non-negative")
        record = self.records.get(contract_hash)
        if record is None:
            raise MeterError("unknown contract")
        record.delivered += kwh
        return record

    # -- receipt generation ---------------------------------------------------------

    def generate_erc(self, ctp: CTPTx, now: int) -> ERCTx:
        """Emit a receipt for a completed delivery.

        Spends the lowest unused pool key so no receipt reuses a leaf.
        Refuses while delivery is incomplete, after commitment expiry, or
        once the pool is spent.
        """
        if self.pool is None or self.coe is None:
            raise MeterError("no key pool or endorsement installed")
        record = self.records.get(ctp.contract_hash)
        if record is None or not record.complete:
            raise MeterError("delivery incomplete")
        if now >= ctp.expiry_time:
            raise MeterError("commitment expired")
        index = self.pool.next_unused()
        if index is None:
            raise MeterError("pool exhausted - regenerate keys and endorsement")
        leaf_pair = self.pool.pairs[index]
        proof = merkle_prove(self.pool.tree, index)
        erc = make_erc(
            time_stamp=now,
            ctp_id=ctp.t_id,
            price=ctp.price,
            coe_root=self.coe.root,
            coe_vm_sign=self.coe.vm_signature,
            coe_vm_cert=self.coe.vm_cert,
            coe_pk=self.coe.vm_pk,
            merkle_hashes=proof,
            keypair=leaf_pair,
        )
        self.pool.used.add(index)
        return erc
