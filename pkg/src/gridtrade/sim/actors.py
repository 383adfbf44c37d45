"""Simulated network participants.

Actors are plain state machines. The world delivers messages to
``on_message`` and calls ``step`` once per tick in a fixed order, so a run
is fully determined by the scenario seed. Actors never share mutable
state; everything crosses through world messaging (energy pulses, the one
physical channel, go straight to the destination meter object, standing in
for the grid connection).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from random import Random
from typing import Dict, List, Optional, Set, Tuple

from ..arb import make_join, negotiation_round
from ..crypto import KeyPair, hash_bytes, sign
from ..ledger import Miner, make_producer_claim
from ..meter import CoE, MeterError, SmartMeter, VerificationRequest
from ..transactions import (
    ContractTerms,
    CTPTx,
    ERCTx,
    GenesisTx,
    GENESIS_CERTIFICATE,
    NegotiationMsg,
    SupplyEnergyTx,
    check_structure,
    compute_contract_hash,
    compute_t_id,
    make_ctp,
    make_genesis,
    make_negotiation,
    make_supply_energy,
    signing_digest,
)
from .messages import (
    BlockGossip,
    ClaimGossip,
    JoinAck,
    JoinRequest,
    Ping,
    Routed,
    TxGossip,
    decode_routed_payload,
)


class Actor:
    def __init__(self, actor_id: str, world):
        self.id = actor_id
        self.world = world

    def on_message(self, payload, now: int) -> None:  # pragma: no cover - default
        pass

    def step(self, now: int) -> None:  # pragma: no cover - default
        pass


class BackboneActor(Actor):
    """Wraps one backbone node; forwards envelopes hop by hop."""

    def __init__(self, actor_id: str, world, node_id: str):
        super().__init__(actor_id, world)
        self.node_id = node_id

    @property
    def node(self):
        return self.world.mesh.nodes[self.node_id]

    def on_message(self, payload, now: int) -> None:
        if isinstance(payload, JoinRequest):
            ok, reason = self.node.join(payload.join, self.world.mesh.table)
            self.world.metrics.bump("join_accepted" if ok else "join_rejected")
            self.world.send(payload.reply_to, JoinAck(payload.join.pk, ok, reason))
            return
        if isinstance(payload, Routed):
            self._route(payload, now)

    def _route(self, env: Routed, now: int) -> None:
        env.trace.append(self.node_id)
        env.hops += 1
        responsible = self.world.mesh.table.owner_of(env.dest_pk)
        if responsible != self.node_id:
            if env.hops >= 4:  # cannot happen with a consistent table
                self.world.metrics.bump("routing_loops")
                return
            self.world.send(self.world.backbone_actor_id(responsible), env)
            return
        node = self.node
        node.note_traffic(env.dest_pk, now)
        round_counter = negotiation_round(env.payload)
        if round_counter is not None and round_counter > node.offer_limit:
            self.world.metrics.bump("dropped_offer_limit")
            return
        endpoint = node.members.get(env.dest_pk)
        if endpoint is None:
            self.world.metrics.bump("undeliverable")
            return
        env.trace.append(endpoint)
        self.world.metrics.bump("messages_delivered")
        self.world.metrics.bump("trace_hops_total", env.hops + 1)
        self.world.send(endpoint, env)


class MinerActor(Actor):
    """Hosts one miner: admissions, block gossip, and scheduled mining."""

    def __init__(self, actor_id: str, world, miner: Miner, reference: bool):
        super().__init__(actor_id, world)
        self.miner = miner
        self.reference = reference  # miner 0 feeds the headline counters
        self.accepted_ctp_ids: List[bytes] = []
        self.erc_rejections: List[Tuple[bytes, str]] = []

    def _bump(self, name: str, by: int = 1) -> None:
        if self.reference:
            self.world.metrics.bump(name, by)

    def on_message(self, payload, now: int) -> None:
        if isinstance(payload, TxGossip):
            self._on_tx(payload.tx, now)
        elif isinstance(payload, ClaimGossip):
            result = self.miner.ledger.submit_claim(payload.claim)
            self._bump("claims_accepted" if result else "claims_rejected")
        elif isinstance(payload, BlockGossip):
            self._on_block(payload.block)

    def _on_tx(self, tx, now: int) -> None:
        if isinstance(tx, CTPTx):
            result = self.miner.ledger.submit_ctp(tx, now)
            if result:
                self.accepted_ctp_ids.append(tx.t_id)
            self._bump("ctp_accepted" if result else "ctp_rejected")
            return
        if isinstance(tx, ERCTx):
            valid, step = self.miner.ledger.validate_erc(tx)
            if not valid:
                self.erc_rejections.append((tx.t_id, step))
                self._bump(f"erc_invalid_{step}")
                return
            if tx.ctp_id not in self.miner.ledger.claims:
                self._bump("erc_unclaimed")
                return
            if self.miner.add_to_mempool(tx):
                self._bump("erc_admitted")
            return
        if isinstance(tx, (GenesisTx, SupplyEnergyTx)):
            ok, _ = check_structure(tx)
            if ok and self.miner.add_to_mempool(tx):
                self._bump("tx_admitted")
            elif not ok:
                self._bump("tx_rejected")

    def _on_block(self, block) -> None:
        outcome = self.miner.receive_block(block)
        if outcome.applied:
            if outcome.header_matched is False:
                self.world.metrics.bump("consistency_faults")
            if outcome.swapped:
                self.world.metrics.bump("tip_swaps")
            if self.reference:
                for tx in block.txs:
                    if isinstance(tx, ERCTx):
                        self.world.on_settlement(tx)
        else:
            self.world.metrics.bump("blocks_not_applied")

    def mine(self, now: int) -> None:
        block = self.miner.mine(now)
        if block is not None:
            self.world.metrics.bump("blocks_mined")
            self.world.broadcast_block(block)


# ---------------------------------------------------------------------------
# regular participants


@dataclass
class OfferState:
    """One supply offer, held under its own energy account."""

    keypair: KeyPair
    amount: int
    posted_price: int
    negotiable: bool
    start_tick: int
    stage: str = "new"  # new -> awaiting_genesis -> awaiting_supply -> live
    genesis_id: Optional[bytes] = None
    supply_id: Optional[bytes] = None
    joined: bool = False
    reserved: bool = False


@dataclass
class PendingContract:
    terms: ContractTerms
    offer: OfferState
    agreed_at: int
    claimed: bool = False


@dataclass
class ActiveDelivery:
    meter: SmartMeter
    contract_hash: bytes
    remaining: int


class MeterMixin:
    """Shared meter duties: joining the backbone and answering VR traffic."""

    meter: Optional[SmartMeter]
    owns_meter: bool

    def _meter_join_step(self, now: int) -> None:
        if not self.owns_meter or self.meter is None:
            return
        if getattr(self, "_meter_join_sent", False):
            return
        self._meter_join_sent = True
        join = make_join(self.meter.identity.keypair, self.id)
        self.world.send_join(self, join)

    def _handle_meter_traffic(self, env: Routed, payload, now: int) -> bool:
        if self.meter is None or env.dest_pk != self.meter.public:
            return False
        if isinstance(payload, Ping):
            return True
        if isinstance(payload, VerificationRequest):
            try:
                coe = self.meter.process_verification_request(
                    payload, self.world.manufacturer_ca_pk
                )
            except MeterError:
                self.world.metrics.bump("vr_rejected")
                return True
            self.world.metrics.bump("vr_served")
            self.world.send_routed(self, self.meter.public, payload.requester_mpk, coe)
            return True
        if isinstance(payload, CoE):
            self.meter.install_coe(payload)
            return True
        return False

    def _pump_meter_receipts(self, now: int) -> None:
        """Tamper-resistant duty: emit a receipt once delivery completes."""
        if self.meter is None or not self.owns_meter:
            return
        for contract_hash, (terms, ctp) in list(self.meter.contracts.items()):
            record = self.meter.records.get(contract_hash)
            if record is None or not record.complete:
                continue
            if contract_hash in self._erc_emitted:
                continue
            if now >= ctp.expiry_time:
                continue
            try:
                erc = self.meter.generate_erc(ctp, now)
            except MeterError:
                self.world.metrics.bump("erc_refused")
                self._erc_emitted.add(contract_hash)
                continue
            self._erc_emitted.add(contract_hash)
            self.world.metrics.bump("erc_emitted")
            self.world.broadcast_tx(erc)


class ProducerActor(Actor, MeterMixin):
    """Posts supply offers, negotiates, claims commitments, delivers energy.

    ``behavior`` selects the adversarial variant: "honest" delivers,
    "silent" never claims nor delivers after the commitment arrives, and
    "forger" claims, skips delivery, and floods forged receipts built from
    material harvested off the public chain.
    """

    def __init__(
        self,
        actor_id: str,
        world,
        meter: Optional[SmartMeter],
        owns_meter: bool,
        rng: Random,
        offers: List[OfferState],
        behavior: str = "honest",
    ):
        super().__init__(actor_id, world)
        self.meter = meter
        self.owns_meter = owns_meter
        self.rng = rng
        self.offers = offers
        self.behavior = behavior
        self.contracts: Dict[bytes, PendingContract] = {}
        self.deliveries: List[ActiveDelivery] = []
        self.unmatched_ctps: List[Tuple[CTPTx, int]] = []  # (ctp, arrived at)
        self.negot_received = 0
        self.declined_mismatch = 0
        self._erc_emitted: Set[bytes] = set()
        # forger state
        self.harvested: Optional[ERCTx] = None
        self.forge_target: Optional[CTPTx] = None
        self.forgeries_sent = 0
        self.forge_keypair = KeyPair.generate(self.rng)

    # -- lifecycle ---------------------------------------------------------

    def step(self, now: int) -> None:
        self._meter_join_step(now)
        for offer in self.offers:
            if offer.stage == "new" and now >= offer.start_tick:
                cert = self.world.distributor_certificate(offer.keypair.public)
                genesis = make_genesis(GENESIS_CERTIFICATE, cert.to_bytes(), offer.keypair)
                offer.genesis_id = genesis.t_id
                offer.stage = "awaiting_genesis"
                self.world.broadcast_tx(genesis)
                if not offer.joined:
                    offer.joined = True
                    self.world.send_join(self, make_join(offer.keypair, self.id))
            elif offer.stage == "genesis_mined":
                supply = make_supply_energy(
                    offer.genesis_id,
                    offer.amount,
                    offer.posted_price,
                    offer.negotiable,
                    offer.keypair,
                )
                offer.supply_id = supply.t_id
                offer.stage = "awaiting_supply"
                self.world.metrics.bump("offers_posted")
                self.world.broadcast_tx(supply)
        self._match_ctps(now)
        self._deliver(now)
        if self.behavior == "forger":
            self._forge_step(now)
        self._pump_meter_receipts(now)

    def _deliver(self, now: int) -> None:
        if self.behavior != "honest":
            return
        still: List[ActiveDelivery] = []
        for job in self.deliveries:
            pulse = min(self.world.config.kwh_per_tick, job.remaining)
            job.meter.record_delivery(job.contract_hash, pulse)
            job.remaining -= pulse
            self.world.metrics.bump("kwh_delivered", pulse)
            if job.remaining > 0:
                still.append(job)
        self.deliveries = still

    # -- messages ------------------------------------------------------------

    def on_message(self, payload, now: int) -> None:
        if isinstance(payload, Routed):
            inner = decode_routed_payload(payload.payload)
            if self._handle_meter_traffic(payload, inner, now):
                return
            if isinstance(inner, NegotiationMsg):
                self._on_negotiation(inner, now)
            return
        if isinstance(payload, BlockGossip):
            for tx in payload.block.txs:
                self._on_mined_tx(tx)
            return
        if isinstance(payload, TxGossip) and isinstance(payload.tx, CTPTx):
            self._on_ctp(payload.tx, now)

    def _on_mined_tx(self, tx) -> None:
        if isinstance(tx, GenesisTx):
            for offer in self.offers:
                if offer.stage == "awaiting_genesis" and offer.genesis_id == tx.t_id:
                    offer.stage = "genesis_mined"
        elif isinstance(tx, SupplyEnergyTx):
            for offer in self.offers:
                if offer.stage == "awaiting_supply" and offer.supply_id == tx.t_id:
                    offer.stage = "live"
        elif isinstance(tx, ERCTx) and self.behavior == "forger":
            if self.harvested is None and tx.pk != self.forge_keypair.public:
                self.harvested = tx

    def _find_offer(self, account_pk: bytes) -> Optional[OfferState]:
        for offer in self.offers:
            if offer.keypair.public == account_pk:
                return offer
        return None

    def _reserve_price(self, offer: OfferState) -> int:
        if not offer.negotiable:
            return offer.posted_price
        return (offer.posted_price * 9 + 9) // 10

    def _on_negotiation(self, msg: NegotiationMsg, now: int) -> None:
        ok, _ = check_structure(msg)
        if not ok:
            return
        offer = self._find_offer(msg.dest_energy_account_pk)
        if offer is None:
            return
        self.negot_received += 1
        self.world.metrics.bump("negotiation_rounds")
        if msg.status == 1:
            # counterparty accepted our counter-offer
            reserve = self._reserve_price(offer)
            if offer.reserved or msg.price < reserve:
                return
            self._agree(offer, msg.price, msg.t_id, msg.sender_pk, now)
            return
        reserve = self._reserve_price(offer)
        if offer.reserved:
            reply = make_negotiation(msg.sender_pk, 0, 0, msg.round + 1, offer.keypair)
            self._reply(offer, msg.sender_pk, reply)
            return
        if msg.price >= reserve:
            accept = make_negotiation(
                msg.sender_pk, msg.price, 1, msg.round + 1, offer.keypair
            )
            self._reply(offer, msg.sender_pk, accept)
            self._agree(offer, msg.price, accept.t_id, msg.sender_pk, now)
            return
        if msg.round + 2 <= self.world.config.offer_limit:
            counter = make_negotiation(
                msg.sender_pk, reserve, 0, msg.round + 1, offer.keypair
            )
            self._reply(offer, msg.sender_pk, counter)
        else:
            reply = make_negotiation(msg.sender_pk, 0, 0, msg.round + 1, offer.keypair)
            self._reply(offer, msg.sender_pk, reply)

    def _reply(self, offer: OfferState, dest_pk: bytes, msg: NegotiationMsg) -> None:
        self.world.send_routed(self, offer.keypair.public, dest_pk, msg)

    def _agree(
        self, offer: OfferState, unit_price: int, nonce: bytes, peer_pk: bytes, now: int
    ) -> None:
        terms = ContractTerms(
            energy_amount=offer.amount,
            unit_price=unit_price,
            total_price=offer.amount * unit_price,
            nonce=nonce,
        )
        contract_hash = compute_contract_hash(terms)
        offer.reserved = True
        self.contracts[contract_hash] = PendingContract(terms=terms, offer=offer, agreed_at=now)
        self.world.register_agreement(
            contract_hash,
            producer_actor=self.id,
            producer_pk=offer.keypair.public,
            price=terms.total_price,
            kwh=terms.energy_amount,
            peer_session_pk=peer_pk,
        )

    def _on_ctp(self, ctp: CTPTx, now: int) -> None:
        ok, _ = check_structure(ctp)
        if not ok:
            return
        # agreements travel over the backbone and may land a couple of ticks
        # after the commitment gossip, so unmatched commitments wait briefly
        self.unmatched_ctps.append((ctp, now))

    def _match_ctps(self, now: int) -> None:
        still: List[Tuple[CTPTx, int]] = []
        for ctp, arrived in self.unmatched_ctps:
            pending = self.contracts.get(ctp.contract_hash)
            if pending is not None:
                if not pending.claimed and ctp.price == pending.terms.total_price:
                    self._accept_commitment(ctp, pending)
                continue
            if now - arrived < 10:
                still.append((ctp, arrived))
                continue
            # never matched: decline; flag it when the price points at us
            if any(
                not c.claimed and c.terms.total_price == ctp.price
                for c in self.contracts.values()
            ):
                self.declined_mismatch += 1
                self.world.metrics.bump("ctp_declined_mismatch")
        self.unmatched_ctps = still

    def _accept_commitment(self, ctp: CTPTx, pending: PendingContract) -> None:
        pending.claimed = True
        if self.behavior == "silent":
            return  # take the commitment, never claim nor deliver
        claim = make_producer_claim(
            ctp.t_id, ctp.contract_hash, pending.terms.energy_amount, pending.offer.keypair
        )
        self.world.broadcast_claim(claim)
        if self.behavior == "forger":
            self.forge_target = ctp
            return
        meter = self.world.meter_for_contract(ctp.contract_hash)
        if meter is not None:
            self.deliveries.append(
                ActiveDelivery(
                    meter=meter,
                    contract_hash=ctp.contract_hash,
                    remaining=pending.terms.energy_amount,
                )
            )

    # -- receipt forging -------------------------------------------------------

    def _forge_step(self, now: int) -> None:
        """Replay a genuine endorsement with keys the forger does not own."""
        if self.harvested is None or self.forge_target is None:
            return
        if self.forgeries_sent >= self.world.config.forgery_attempts:
            return
        if now >= self.forge_target.expiry_time:
            return
        src = self.harvested
        if self.forgeries_sent % 2 == 0:
            # fresh key: the inclusion proof cannot cover it
            erc = ERCTx(
                t_id=b"",
                time_stamp=now,
                ctp_id=self.forge_target.t_id,
                price=self.forge_target.price,
                coe_root=src.coe_root,
                coe_vm_sign=src.coe_vm_sign,
                coe_vm_cert=src.coe_vm_cert,
                coe_pk=src.coe_pk,
                merkle_hashes=src.merkle_hashes,
                pk=self.forge_keypair.public,
                sign=b"",
            )
            erc = replace(erc, sign=sign(self.forge_keypair, signing_digest(erc)))
        else:
            # revealed leaf key: proof verifies but the signature cannot
            erc = ERCTx(
                t_id=b"",
                time_stamp=now,
                ctp_id=self.forge_target.t_id,
                price=self.forge_target.price,
                coe_root=src.coe_root,
                coe_vm_sign=src.coe_vm_sign,
                coe_vm_cert=src.coe_vm_cert,
                coe_pk=src.coe_pk,
                merkle_hashes=src.merkle_hashes,
                pk=src.pk,
                sign=b"",
            )
            erc = replace(erc, sign=sign(self.forge_keypair, signing_digest(erc)))
        erc = replace(erc, t_id=compute_t_id(erc))
        self.forgeries_sent += 1
        self.world.metrics.bump("forgeries_sent")
        self.world.broadcast_tx(erc)


@dataclass
class TradeAttempt:
    offer_key: bytes  # supply t_id
    account_pk: bytes
    amount: int
    posted_price: int
    negotiable: bool
    session: KeyPair
    state: str  # joining -> negotiating -> committed
    started: int
    round: int = 0
    ctp: Optional[CTPTx] = None


class ConsumerActor(Actor, MeterMixin):
    """Buys energy: scans offers, negotiates, commits, lets the meter attest.

    ``behavior`` variants: "honest"; "no_ctp" agrees then never commits;
    "bad_hash" commits to a corrupted contract hash; "silent" commits then
    ignores the rest of the trade; "double_spend" fires a burst of
    commitments summing past its balance; "flood" sprays negotiation
    messages; "chatter" generates routed pings for load scenarios.
    """

    def __init__(
        self,
        actor_id: str,
        world,
        account: KeyPair,
        meter: Optional[SmartMeter],
        owns_meter: bool,
        rng: Random,
        behavior: str = "honest",
        max_trades: int = 8,
        start_delay: int = 0,
        offer_preference: int = 0,
        sibling_pks: Optional[Set[bytes]] = None,
    ):
        super().__init__(actor_id, world)
        self.account = account
        self.meter = meter
        self.owns_meter = owns_meter
        self.rng = rng
        self.behavior = behavior
        self.max_trades = max_trades
        self.start_delay = start_delay
        self.offer_preference = offer_preference
        self.sibling_pks = sibling_pks or set()
        self.offers: Dict[bytes, tuple] = {}  # supply t_id -> (pk, amount, price, negotiable)
        self.tried: Set[bytes] = set()
        self.attempt: Optional[TradeAttempt] = None
        self.trades_done = 0
        self.settled_ctps: Set[bytes] = set()
        self.sent_ctps: List[CTPTx] = []
        self._erc_emitted: Set[bytes] = set()
        self._init_state = "join_meter"
        self._vr_sent_at: Optional[int] = None
        self.ready = False
        # attack state
        self.burst_fired = False
        self.flood_sent = 0
        self.flood_session: Optional[KeyPair] = None
        self.flood_target: Optional[tuple] = None

    # -- initialization: meter join, key pool, endorsement --------------------

    def _init_step(self, now: int) -> None:
        if self.behavior in ("double_spend", "chatter"):
            self.ready = True
            return
        if self.meter is None:
            self.ready = True
            return
        if self._init_state == "join_meter":
            self._meter_join_step(now)
            self._init_state = "make_pool"
            return
        if self._init_state == "make_pool":
            if self.meter.pool is None:
                self.meter.generate_key_pool(self.world.config.key_pool_size)
            self._init_state = "request_coe"
            return
        if self._init_state == "request_coe":
            if now < 3:
                return
            vm_pk = self.world.pick_verifier_meter(self.meter.public, self.rng)
            if vm_pk is None:
                self.ready = True  # nobody to endorse us; trade cannot proceed
                self._init_state = "done"
                return
            vr = self.meter.make_verification_request(self.meter.pool, vm_pk)
            self.world.metrics.bump("vr_sent")
            self.world.send_routed(self, self.meter.public, vm_pk, vr)
            self._vr_sent_at = now
            self._init_state = "await_coe"
            return
        if self._init_state == "await_coe":
            if self.meter.coe is not None:
                self.ready = True
                self._init_state = "done"
            elif now - self._vr_sent_at > 30:
                self._init_state = "request_coe"  # retry with another verifier

    # -- main loop ----------------------------------------------------------------

    def step(self, now: int) -> None:
        if not self.ready:
            self._init_step(now)
            if not self.ready:
                return
        if self.behavior == "double_spend":
            self._double_spend_step(now)
        elif self.behavior == "flood":
            self._flood_step(now)
        elif self.behavior == "chatter":
            self._chatter_step(now)
        else:
            self._trade_step(now)
        self._pump_meter_receipts(now)

    # -- honest (and near-honest) trading -----------------------------------------

    def _trade_step(self, now: int) -> None:
        attempt = self.attempt
        if attempt is None:
            if self.trades_done >= self.max_trades or now < self.start_delay:
                return
            self._start_trade(now)
            return
        if attempt.state == "committed":
            if attempt.ctp is not None and (
                attempt.ctp.t_id in self.settled_ctps or now >= attempt.ctp.expiry_time
            ):
                self.attempt = None
                self.trades_done += 1
            return
        if now - attempt.started > self.world.config.negotiation_timeout:
            self.tried.add(attempt.offer_key)
            self.attempt = None

    def _start_trade(self, now: int) -> None:
        candidates = []
        for key in sorted(self.offers):
            if key in self.tried:
                continue
            pk, amount, price, negotiable = self.offers[key]
            if pk in self.sibling_pks:
                continue
            if amount * price > self.world.ledger_view.available_balance(self.account.public):
                continue
            candidates.append((key, pk, amount, price, negotiable))
        if not candidates:
            return
        # spread concurrent buyers over the book so they rarely chase one offer
        key, pk, amount, price, negotiable = candidates[
            self.offer_preference % len(candidates)
        ]
        session = KeyPair.generate(self.rng)
        self.attempt = TradeAttempt(
            offer_key=key,
            account_pk=pk,
            amount=amount,
            posted_price=price,
            negotiable=negotiable,
            session=session,
            state="joining",
            started=now,
        )
        self.world.send_join(self, make_join(session, self.id))

    def _first_offer_price(self) -> int:
        assert self.attempt is not None
        if not self.attempt.negotiable:
            return self.attempt.posted_price
        return self.attempt.posted_price * 8 // 10

    def on_join_ack(self, ack: JoinAck, now: int) -> None:
        attempt = self.attempt
        if attempt is None or attempt.state != "joining" or ack.pk != attempt.session.public:
            return
        if not ack.accepted:
            self.tried.add(attempt.offer_key)
            self.attempt = None
            return
        price = self._first_offer_price()
        msg = make_negotiation(attempt.account_pk, price, 0, 1, attempt.session)
        attempt.state = "negotiating"
        attempt.round = 1
        self.world.metrics.bump("negotiations_started")
        self.world.send_routed(self, attempt.session.public, attempt.account_pk, msg)

    def _on_negotiation(self, msg: NegotiationMsg, now: int) -> None:
        ok, _ = check_structure(msg)
        if not ok:
            return
        attempt = self.attempt
        if (
            attempt is None
            or attempt.state != "negotiating"
            or msg.dest_energy_account_pk != attempt.session.public
            or msg.sender_pk != attempt.account_pk
        ):
            return
        self.world.metrics.bump("negotiation_rounds")
        if msg.status == 1:
            self._commit(attempt, msg.price, msg.t_id, now)
            return
        if msg.price == 0:  # rejected outright
            self.tried.add(attempt.offer_key)
            self.attempt = None
            return
        # counter-offer: accept anything at or below the posted price
        if msg.price <= attempt.posted_price and msg.round + 1 <= self.world.config.offer_limit:
            accept = make_negotiation(
                attempt.account_pk, msg.price, 1, msg.round + 1, attempt.session
            )
            self.world.send_routed(self, attempt.session.public, attempt.account_pk, accept)
            self._commit(attempt, msg.price, accept.t_id, now)
        else:
            self.tried.add(attempt.offer_key)
            self.attempt = None

    def _commit(self, attempt: TradeAttempt, unit_price: int, nonce: bytes, now: int) -> None:
        """Agreement reached: derive terms and broadcast the commitment."""
        terms = ContractTerms(
            energy_amount=attempt.amount,
            unit_price=unit_price,
            total_price=attempt.amount * unit_price,
            nonce=nonce,
        )
        contract_hash = compute_contract_hash(terms)
        self.world.register_agreement(
            contract_hash,
            consumer_actor=self.id,
            payer_pk=self.account.public,
            price=terms.total_price,
            kwh=terms.energy_amount,
            meter=self.meter,
        )
        attempt.state = "committed"
        self.tried.add(attempt.offer_key)
        if self.behavior == "no_ctp":
            self.world.metrics.bump("agreements_without_commit")
            return
        broadcast_hash = contract_hash
        if self.behavior == "bad_hash":
            broadcast_hash = bytes([contract_hash[0] ^ 0xFF]) + contract_hash[1:]
        ctp = make_ctp(
            time_stamp=now,
            expiry_time=now + self.world.config.ctp_default_ttl,
            price=terms.total_price,
            contract_hash=broadcast_hash,
            keypair=self.account,
        )
        attempt.ctp = ctp
        self.sent_ctps.append(ctp)
        if self.behavior != "bad_hash" and self.meter is not None:
            self.meter.register_contract(terms, ctp)
        self.world.metrics.bump("ctp_broadcast")
        self.world.broadcast_tx(ctp)

    # -- adversarial behaviors ---------------------------------------------------

    def _double_spend_step(self, now: int) -> None:
        if self.burst_fired or now < 30:
            return
        self.burst_fired = True
        balance = self.world.ledger_view.coin_balance(self.account.public)
        count = self.world.config.double_spend_ctps
        prices, total = [], 0
        for _ in range(count):
            price = self.rng.randrange(max(balance // 4, 1), max(balance // 2, 2))
            prices.append(price)
            total += price
        if total <= balance:  # the burst must overshoot the balance
            prices[-1] += balance - total + 1
        for price in prices:
            ctp = make_ctp(
                time_stamp=now,
                expiry_time=now + self.world.config.ctp_default_ttl,
                price=price,
                contract_hash=hash_bytes(self.rng.randbytes(16)),
                keypair=self.account,
            )
            self.sent_ctps.append(ctp)
            self.world.metrics.bump("ctp_broadcast")
            self.world.broadcast_tx(ctp)

    def _flood_step(self, now: int) -> None:
        if self.flood_target is None:
            for key in sorted(self.offers):
                pk, amount, price, negotiable = self.offers[key]
                self.flood_target = (pk, price)
                break
            if self.flood_target is None:
                return
            self.flood_session = KeyPair.generate(self.rng)
            self.world.send_join(self, make_join(self.flood_session, self.id))
            return
        if self.flood_sent >= self.world.config.flood_offers:
            return
        if not getattr(self, "_flood_joined", False):
            return
        pk, _ = self.flood_target
        self.flood_sent += 1
        msg = make_negotiation(pk, 1, 0, self.flood_sent, self.flood_session)
        self.world.metrics.bump("flood_offers_sent")
        self.world.send_routed(self, self.flood_session.public, pk, msg)

    def _chatter_step(self, now: int) -> None:
        if now < 5:
            return
        dest = self.world.pick_ping_target(self.rng)
        if dest is None:
            return
        self.world.metrics.bump("pings_sent")
        self.world.send_routed(self, self.account.public, dest, Ping(b"load"))

    # -- messages -------------------------------------------------------------------

    def on_message(self, payload, now: int) -> None:
        if isinstance(payload, JoinAck):
            if self.behavior == "flood" and self.flood_session is not None:
                if payload.pk == self.flood_session.public and payload.accepted:
                    self._flood_joined = True
                return
            self.on_join_ack(payload, now)
            return
        if isinstance(payload, Routed):
            inner = decode_routed_payload(payload.payload)
            if self._handle_meter_traffic(payload, inner, now):
                return
            if isinstance(inner, NegotiationMsg):
                self._on_negotiation(inner, now)
            return
        if isinstance(payload, BlockGossip):
            for tx in payload.block.txs:
                self._on_mined_tx(tx)

    def _on_mined_tx(self, tx) -> None:
        if isinstance(tx, SupplyEnergyTx):
            self.offers.setdefault(
                tx.t_id, (tx.pk, tx.energy_amount, tx.energy_price, tx.negotiable)
            )
        elif isinstance(tx, ERCTx):
            self.settled_ctps.add(tx.ctp_id)
