"""Blockchain state machine: accounts, pending payments, blocks, settlement.

Payment commitments (CTPs) are never mined. Every miner keeps them in a
local pending database; the digest of that database travels in each block
header (``ctp_hash``) so peers can detect drift. A commitment is spendable
capacity: a payer's available balance is its mined coin balance minus the
sum of its pending commitment prices, and admission rejects any commitment
that would push the pending total over the balance. Expired commitments
are swept, which releases the held amount.

Settlement is a deterministic state transition every miner executes when a
block carrying a receipt (ERC) is applied: the committed price moves from
payer to producer, the producer's energy balance drops by the contracted
kWh, and the commitment leaves the pending database for good.

The receipt itself never names the producer or the kWh (the contract hash
hides them), so producers broadcast a signed claim binding a pending
commitment to their account and the contracted energy. Claims, like
commitments, are miner-local and never mined.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from random import Random
from typing import Dict, List, Optional, Set, Tuple

from .crypto import (
    DIGEST_LEN,
    PUBLIC_KEY_LEN,
    SIGNATURE_LEN,
    HashDigest,
    KeyPair,
    PublicKey,
    Signature,
    ca_verify,
    hash_bytes,
    merkle_verify,
    sign,
    verify,
)
from .transactions import (
    CTPTx,
    ERCTx,
    GenesisTx,
    GENESIS_COIN_BURN,
    MINEABLE_TAGS,
    SupplyEnergyTx,
    Transaction,
    check_structure,
    compute_t_id,
    decode_canonical,
    encode_canonical,
    signing_digest,
)


@dataclass
class Result:
    """Outcome of a state-machine submission."""

    accepted: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass
class AccountState:
    """Per-key ledger view: mined coin balance plus the energy account."""

    coin_balance: int = 0
    energy_balance: int = 0
    last_tx_id: Optional[HashDigest] = None  # None until a genesis is applied

    @property
    def has_energy_account(self) -> bool:
        return self.last_tx_id is not None

    def clone(self) -> "AccountState":
        return AccountState(self.coin_balance, self.energy_balance, self.last_tx_id)


class CTPDatabase:
    """Miner-local store of pending, unmined payment commitments."""

    def __init__(self):
        self.entries: Dict[HashDigest, Tuple[CTPTx, int]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ctp_id: HashDigest) -> bool:
        return ctp_id in self.entries

    def get(self, ctp_id: HashDigest) -> Optional[CTPTx]:
        entry = self.entries.get(ctp_id)
        return entry[0] if entry else None

    def insert(self, tx: CTPTx, now: int) -> None:
        self.entries[tx.t_id] = (tx, now)

    def remove(self, ctp_id: HashDigest) -> None:
        self.entries.pop(ctp_id, None)

    def pending_total(self, pk: PublicKey) -> int:
        return sum(tx.price for tx, _ in self.entries.values() if tx.pk == pk)

    def sweep_expired(self, now: int) -> List[HashDigest]:
        """Drop every entry with expiry_time <= now; returns released ids."""
        released = sorted(
            ctp_id
            for ctp_id, (tx, _) in self.entries.items()
            if tx.expiry_time <= now
        )
        for ctp_id in released:
            del self.entries[ctp_id]
        return released

    def digest(self) -> HashDigest:
        """Deterministic digest over entries sorted by commitment id."""
        parts = []
        for ctp_id in sorted(self.entries):
            tx, _ = self.entries[ctp_id]
            parts.append(ctp_id)
            parts.append(encode_canonical(tx))
        return hash_bytes(b"".join(parts))

    def clone(self) -> "CTPDatabase":
        other = CTPDatabase()
        other.entries = dict(self.entries)
        return other


# ---------------------------------------------------------------------------
# producer claims


@dataclass(frozen=True)
class ProducerClaim:
    """Signed binding of a pending commitment to the producer it pays.

    Broadcast by the producer when it starts delivering; kept miner-local
    (never mined) so miners can execute settlement with the right payee and
    energy amount.
    """

    ctp_id: HashDigest
    contract_hash: HashDigest
    producer_pk: PublicKey
    energy_kwh: int
    sign: Signature

    def _body(self) -> bytes:
        return b"".join(
            [
                b"\x20",
                self.ctp_id,
                self.contract_hash,
                self.producer_pk,
                self.energy_kwh.to_bytes(8, "big"),
            ]
        )

    def verify_signature(self) -> bool:
        return verify(self.producer_pk, hash_bytes(self._body()), self.sign)


def make_producer_claim(
    ctp_id: HashDigest, contract_hash: HashDigest, energy_kwh: int, keypair: KeyPair
) -> ProducerClaim:
    claim = ProducerClaim(
        ctp_id=ctp_id,
        contract_hash=contract_hash,
        producer_pk=keypair.public,
        energy_kwh=energy_kwh,
        sign=b"",
    )
    return replace(claim, sign=sign(keypair, hash_bytes(claim._body())))


@dataclass(frozen=True)
class SettlementRecord:
    ctp_id: HashDigest
    erc_id: HashDigest
    consumer_pk: PublicKey
    producer_pk: PublicKey
    price: int
    energy_kwh: int


# ---------------------------------------------------------------------------
# blocks


@dataclass(frozen=True)
class Block:
    """Mined history unit; ``ctp_hash`` mirrors the miner's pending DB."""

    height: int
    prev_hash: HashDigest
    ctp_hash: HashDigest
    timestamp: int
    miner_pk: PublicKey
    miner_sign: Signature
    txs: tuple  # of mineable transactions

    def _unsigned(self) -> bytes:
        parts = [
            self.height.to_bytes(8, "big"),
            self.prev_hash,
            self.ctp_hash,
            self.timestamp.to_bytes(8, "big"),
            self.miner_pk,
            len(self.txs).to_bytes(4, "big"),
        ]
        for tx in self.txs:
            raw = encode_canonical(tx)
            parts.append(len(raw).to_bytes(4, "big"))
            parts.append(raw)
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self._unsigned() + self.miner_sign

    @staticmethod
    def from_bytes(data: bytes) -> "Block":
        if len(data) < 8 + 32 + 32 + 8 + PUBLIC_KEY_LEN + 4 + SIGNATURE_LEN:
            raise ValueError("truncated block")
        off = 0
        height = int.from_bytes(data[off : off + 8], "big"); off += 8
        prev_hash = data[off : off + 32]; off += 32
        ctp_hash = data[off : off + 32]; off += 32
        timestamp = int.from_bytes(data[off : off + 8], "big"); off += 8
        miner_pk = data[off : off + PUBLIC_KEY_LEN]; off += PUBLIC_KEY_LEN
        count = int.from_bytes(data[off : off + 4], "big"); off += 4
        txs = []
        for _ in range(count):
            if off + 4 > len(data):
                raise ValueError("truncated block body")
            n = int.from_bytes(data[off : off + 4], "big"); off += 4
            if off + n > len(data):
                raise ValueError("block transaction runs past end")
            txs.append(decode_canonical(data[off : off + n]))
            off += n
        miner_sign = data[off : off + SIGNATURE_LEN]
        if len(miner_sign) != SIGNATURE_LEN or off + SIGNATURE_LEN != len(data):
            raise ValueError("bad block signature framing")
        return Block(
            height=height,
            prev_hash=prev_hash,
            ctp_hash=ctp_hash,
            timestamp=timestamp,
            miner_pk=miner_pk,
            miner_sign=miner_sign,
            txs=tuple(txs),
        )

    def signing_digest(self) -> HashDigest:
        return hash_bytes(self._unsigned())

    def block_hash(self) -> HashDigest:
        return hash_bytes(self.to_bytes())

    def verify_miner_signature(self) -> bool:
        return verify(self.miner_pk, self.signing_digest(), self.miner_sign)


GENESIS_PREV = b"\x00" * DIGEST_LEN
CHAIN_DUMP_MAGIC = b"GTCHAIN1"


class Blockchain:
    """Append-only block list with flat-file dump/load."""

    def __init__(self):
        self.blocks: List[Block] = []

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def height(self) -> int:
        return len(self.blocks)  # next block's height; chain starts empty

    @property
    def tip_hash(self) -> HashDigest:
        return self.blocks[-1].block_hash() if self.blocks else GENESIS_PREV

    def append(self, block: Block) -> None:
        self.blocks.append(block)

    def pop(self) -> Block:
        return self.blocks.pop()

    def dump_bytes(self) -> bytes:
        parts = [CHAIN_DUMP_MAGIC, len(self.blocks).to_bytes(4, "big")]
        for block in self.blocks:
            raw = block.to_bytes()
            parts.append(len(raw).to_bytes(4, "big"))
            parts.append(raw)
        return b"".join(parts)

    @staticmethod
    def load_bytes(data: bytes) -> "Blockchain":
        if data[:8] != CHAIN_DUMP_MAGIC:
            raise ValueError("not a chain dump")
        count = int.from_bytes(data[8:12], "big")
        off = 12
        chain = Blockchain()
        for _ in range(count):
            n = int.from_bytes(data[off : off + 4], "big"); off += 4
            chain.append(Block.from_bytes(data[off : off + n]))
            off += n
        if off != len(data):
            raise ValueError("trailing bytes in chain dump")
        return chain


# ---------------------------------------------------------------------------
# the ledger state machine


@dataclass(frozen=True)
class LedgerConfig:
    burn_threshold: int
    distributor_ca_pk: PublicKey
    manufacturer_ca_pk: PublicKey


VALIDATE_ERC_STEPS = ("a", "b", "c", "d", "e")


class Ledger:
    """Deterministic account + pending-commitment state every miner runs."""

    def __init__(self, config: LedgerConfig):
        self.config = config
        self.accounts: Dict[PublicKey, AccountState] = {}
        self.ctp_db = CTPDatabase()
        self.claims: Dict[HashDigest, ProducerClaim] = {}
        self.settled: Set[HashDigest] = set()
        self.settlements: List[SettlementRecord] = []

    def clone(self) -> "Ledger":
        other = Ledger(self.config)
        other.accounts = {pk: acct.clone() for pk, acct in self.accounts.items()}
        other.ctp_db = self.ctp_db.clone()
        other.claims = dict(self.claims)
        other.settled = set(self.settled)
        other.settlements = list(self.settlements)
        return other

    # -- scenario setup ----------------------------------------------------

    def seed_account(self, pk: PublicKey, coin: int) -> None:
        """Endow an account with starting coin (scenario initial state)."""
        acct = self.accounts.setdefault(pk, AccountState())
        acct.coin_balance += coin

    # -- balances ----------------------------------------------------------

    def coin_balance(self, pk: PublicKey) -> int:
        acct = self.accounts.get(pk)
        return acct.coin_balance if acct else 0

    def available_balance(self, pk: PublicKey) -> int:
        """Mined balance minus everything already committed and pending."""
        return self.coin_balance(pk) - self.ctp_db.pending_total(pk)

    def total_coin(self) -> int:
        return sum(acct.coin_balance for acct in self.accounts.values())

    # -- submissions ---------------------------------------------------------

    def submit_genesis(self, tx: GenesisTx) -> Result:
        ok, reason = check_structure(tx)
        if not ok:
            return Result(False, reason)
        acct = self.accounts.get(tx.pk)
        if acct is not None and acct.has_energy_account:
            return Result(False, "account exists")
        if tx.method == GENESIS_COIN_BURN:
            burned = int.from_bytes(tx.evidence, "big")
            if burned < self.config.burn_threshold:
                return Result(False, "burn below threshold")
        else:
            if not ca_verify(tx.evidence, self.config.distributor_ca_pk):
                return Result(False, "bad distributor certificate")
        acct = self.accounts.setdefault(tx.pk, AccountState())
        acct.last_tx_id = tx.t_id
        return Result(True)

    def submit_supply_energy(self, tx: SupplyEnergyTx) -> Result:
        ok, reason = check_structure(tx)
        if not ok:
            return Result(False, reason)
        acct = self.accounts.get(tx.pk)
        if acct is None or not acct.has_energy_account:
            return Result(False, "unknown account")
        if tx.p_t_id != acct.last_tx_id:
            return Result(False, "chain break")
        acct.energy_balance += tx.energy_amount
        acct.last_tx_id = tx.t_id
        return Result(True)

    def submit_ctp(self, tx: CTPTx, now: int) -> Result:
        """Admit a payment commitment if the payer can still cover it.

        Accepted commitments enter the pending database only; chain state
        never changes and the commitment is never mined.
        """
        ok, reason = check_structure(tx)
        if not ok:
            return Result(False, reason)
        if tx.expiry_time <= now:
            return Result(False, "stale")
        if tx.t_id in self.ctp_db or tx.t_id in self.settled:
            return Result(False, "duplicate")
        if tx.price > self.available_balance(tx.pk):
            return Result(False, "would double-spend")
        self.ctp_db.insert(tx, now)
        return Result(True)

    def expire_ctps(self, now: int) -> List[HashDigest]:
        """Release every commitment past its expiry; idempotent at fixed now."""
        released = self.ctp_db.sweep_expired(now)
        for ctp_id in released:
            self.claims.pop(ctp_id, None)
        return released

    def submit_claim(self, claim: ProducerClaim) -> Result:
        if not claim.verify_signature():
            return Result(False, "bad claim signature")
        ctp = self.ctp_db.get(claim.ctp_id)
        if ctp is None:
            return Result(False, "unknown commitment")
        if ctp.contract_hash != claim.contract_hash:
            return Result(False, "contract hash mismatch")
        acct = self.accounts.get(claim.producer_pk)
        if acct is None or not acct.has_energy_account:
            return Result(False, "claimant has no energy account")
        if acct.energy_balance < claim.energy_kwh:
            return Result(False, "insufficient energy balance")
        if claim.ctp_id in self.claims:
            return Result(False, "already claimed")
        self.claims[claim.ctp_id] = claim
        return Result(True)

    # -- receipt verification ------------------------------------------------

    def validate_erc(self, erc: ERCTx) -> Tuple[bool, Optional[str]]:
        """Run the receipt checks in order; returns (valid, failing_step).

        Steps: (a) referenced commitment is pending, (b) prices match,
        (c) verifier meter's certificate and root signature check out,
        (d) the signing key is proven inside the attestation tree,
        (e) the receipt signature verifies under that key.
        """
        ctp = self.ctp_db.get(erc.ctp_id)
        if ctp is None:
            return False, "a"
        if erc.price != ctp.price:
            return False, "b"
        if not ca_verify(erc.coe_vm_cert, self.config.manufacturer_ca_pk):
            return False, "c"
        if erc.coe_vm_cert.subject_pk != erc.coe_pk:
            return False, "c"
        if not verify(erc.coe_pk, erc.coe_root, erc.coe_vm_sign):
            return False, "c"
        if not merkle_verify(erc.coe_root, erc.pk, erc.merkle_hashes):
            return False, "d"
        if not verify(erc.pk, signing_digest(erc), erc.sign):
            return False, "e"
        if compute_t_id_safe(erc) != erc.t_id:
            return False, "e"
        return True, None

    def settle(self, erc: ERCTx, producer_pk: PublicKey) -> Result:
        """Pay the producer and consume the commitment; runs once per ctp_id."""
        if erc.ctp_id in self.settled:
            return Result(False, "already settled")
        ctp = self.ctp_db.get(erc.ctp_id)
        if ctp is None:
            return Result(False, "no pending commitment")
        claim = self.claims.get(erc.ctp_id)
        if claim is None or claim.producer_pk != producer_pk:
            return Result(False, "no matching claim")
        consumer = self.accounts.get(ctp.pk)
        producer = self.accounts.get(producer_pk)
        if consumer is None or producer is None:
            return Result(False, "missing account")
        if consumer.coin_balance < ctp.price:
            return Result(False, "payer balance underflow")
        if producer.energy_balance < claim.energy_kwh:
            return Result(False, "producer energy underflow")
        consumer.coin_balance -= ctp.price
        producer.coin_balance += ctp.price
        producer.energy_balance -= claim.energy_kwh
        self.ctp_db.remove(erc.ctp_id)
        del self.claims[erc.ctp_id]
        self.settled.add(erc.ctp_id)
        record = SettlementRecord(
            ctp_id=erc.ctp_id,
            erc_id=erc.t_id,
            consumer_pk=ctp.pk,
            producer_pk=producer_pk,
            price=ctp.price,
            energy_kwh=claim.energy_kwh,
        )
        self.settlements.append(record)
        return Result(True)

    # -- block application ---------------------------------------------------

    def apply_tx(self, tx: Transaction) -> Result:
        """Validate and apply one mined transaction against current state."""
        if isinstance(tx, GenesisTx):
            return self.submit_genesis(tx)
        if isinstance(tx, SupplyEnergyTx):
            return self.submit_supply_energy(tx)
        if isinstance(tx, ERCTx):
            valid, step = self.validate_erc(tx)
            if not valid:
                return Result(False, f"receipt invalid at step {step}")
            claim = self.claims.get(tx.ctp_id)
            if claim is None:
                return Result(False, "unclaimed receipt")
            return self.settle(tx, claim.producer_pk)
        return Result(False, f"transaction kind {tx.kind} cannot be mined")

    def state_digest(self) -> HashDigest:
        """Digest over accounts and pending commitments, for replay checks."""
        parts = []
        for pk in sorted(self.accounts):
            acct = self.accounts[pk]
            parts.append(pk)
            parts.append(acct.coin_balance.to_bytes(8, "big"))
            parts.append(acct.energy_balance.to_bytes(8, "big"))
            parts.append(acct.last_tx_id or b"\x00" * 32)
        parts.append(self.ctp_db.digest())
        return hash_bytes(b"".join(parts))


def compute_t_id_safe(tx: Transaction) -> Optional[HashDigest]:
    try:
        return compute_t_id(tx)
    except Exception:
        return None


# ---------------------------------------------------------------------------
# the miner


@dataclass
class ApplyOutcome:
    applied: bool
    reason: Optional[str] = None
    swapped: bool = False  # tip replaced by an equal-height rival
    header_matched: Optional[bool] = None  # ctp_hash vs local digest history


class Miner:
    """One consensus participant: chain, pending DB, mempool, mining clock.

    Consensus is time based: a miner waits a random time inside each
    consensus period and mines at most one block per period, signing the
    header instead of solving a puzzle.
    """

    def __init__(self, keypair: KeyPair, config: LedgerConfig, consensus_period: int):
        self.keypair = keypair
        self.ledger = Ledger(config)
        self.chain = Blockchain()
        self.consensus_period = consensus_period
        self.mempool: List[Transaction] = []
        self._mempool_ids: Set[HashDigest] = set()
        self.next_mine_at: Optional[int] = None
        self.blocks_this_period = 0
        self.blocks_mined = 0
        self.mined_periods: List[int] = []
        # digest journal: (tick, digest) recorded at end of each changed tick
        self._digest_journal: List[Tuple[int, HashDigest]] = [(-1, CTPDatabase().digest())]
        self._last_apply_snapshot: Optional[Tuple[Ledger, Block]] = None

    # -- scheduling ----------------------------------------------------------

    def start_period(self, period_start: int, rng: Random) -> int:
        """Reset the per-period quota and pick a uniform wakeup tick."""
        self.blocks_this_period = 0
        self.next_mine_at = period_start + rng.randrange(self.consensus_period)
        return self.next_mine_at

    # -- mempool ---------------------------------------------------------------

    def add_to_mempool(self, tx: Transaction) -> bool:
        if tx.tag not in MINEABLE_TAGS:
            return False
        if tx.t_id in self._mempool_ids:
            return False
        self.mempool.append(tx)
        self._mempool_ids.add(tx.t_id)
        return True

    def _drop_from_mempool(self, t_ids: Set[HashDigest]) -> None:
        if not t_ids:
            return
        self.mempool = [tx for tx in self.mempool if tx.t_id not in t_ids]
        self._mempool_ids -= t_ids

    # -- mining ----------------------------------------------------------------

    def mine(self, now: int) -> Optional[Block]:
        """Assemble, sign, and return a block, or None if the quota is spent.

        Transactions are packed in mempool order, each validated against a
        scratch copy of the ledger so the block applies cleanly everywhere.
        The header's ctp_hash is the pending-DB digest at mining time; an
        empty mempool still yields a heartbeat block.
        """
        if self.blocks_this_period >= 1:
            return None
        scratch = self.ledger.clone()
        packed = []
        for tx in self.mempool:
            if scratch.apply_tx(tx):
                packed.append(tx)
        block = Block(
            height=self.chain.height,
            prev_hash=self.chain.tip_hash,
            ctp_hash=self.ledger.ctp_db.digest(),
            timestamp=now,
            miner_pk=self.keypair.public,
            miner_sign=b"",
            txs=tuple(packed),
        )
        block = replace(block, miner_sign=sign(self.keypair, block.signing_digest()))
        self.blocks_this_period += 1
        self.blocks_mined += 1
        self.mined_periods.append(now // self.consensus_period)
        return block

    # -- receiving blocks --------------------------------------------------------

    def receive_block(self, block: Block) -> ApplyOutcome:
        """Extend the chain, or swap an equal-height rival in by tiebreak.

        Fork choice is longest chain; between two blocks at the same height
        on the same parent the lower miner key wins. Anything else (gaps,
        unknown parents) is rejected and surfaces as a fork metric.
        """
        if not block.verify_miner_signature():
            return ApplyOutcome(False, "bad miner signature")
        if block.height == self.chain.height and block.prev_hash == self.chain.tip_hash:
            return self._apply(block)
        if (
            self.chain.blocks
            and block.height == self.chain.height - 1
            and block.prev_hash == self.chain.blocks[-1].prev_hash
        ):
            # equal-height rival for the current tip
            tip = self.chain.blocks[-1]
            if block.miner_pk < tip.miner_pk and self._last_apply_snapshot is not None:
                saved_ledger, saved_block = self._last_apply_snapshot
                if saved_block.block_hash() == tip.block_hash():
                    self.ledger = saved_ledger.clone()
                    popped = self.chain.pop()
                    outcome = self._apply(block)
                    if outcome.applied:
                        outcome.swapped = True
                        for tx in popped.txs:  # unmined again
                            self.add_to_mempool(tx)
                    else:
                        # rival failed validation; restore the old tip
                        self.ledger = saved_ledger.clone()
                        for tx in popped.txs:
                            self.ledger.apply_tx(tx)
                        self.chain.append(popped)
                    return outcome
            return ApplyOutcome(False, "lost tiebreak")
        return ApplyOutcome(False, "does not extend tip")

    def _apply(self, block: Block) -> ApplyOutcome:
        snapshot = self.ledger  # replaced wholesale on success, so no copy needed
        trial = self.ledger.clone()
        for tx in block.txs:
            result = trial.apply_tx(tx)
            if not result:
                return ApplyOutcome(False, f"invalid transaction: {result.reason}")
        self.ledger = trial
        self.chain.append(block)
        self._last_apply_snapshot = (snapshot, block)
        self._drop_from_mempool({tx.t_id for tx in block.txs})
        matched = block.ctp_hash == self.digest_as_of(block.timestamp)
        return ApplyOutcome(True, header_matched=matched)

    # -- pending-DB digest journal ---------------------------------------------

    def record_tick_digest(self, now: int) -> None:
        """Record the end-of-tick pending-DB digest for header comparison."""
        digest = self.ledger.ctp_db.digest()
        if self._digest_journal[-1][1] != digest:
            self._digest_journal.append((now, digest))

    def digest_as_of(self, tick: int) -> HashDigest:
        """Pending-DB digest this miner had at the end of ``tick``."""
        result = self._digest_journal[0][1]
        for at, digest in self._digest_journal:
            if at > tick:
                break
            result = digest
        return result
