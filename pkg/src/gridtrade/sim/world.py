"""Deterministic discrete-event world wiring all protocol actors together.

Time is integer ticks; one tick is one network hop. Each tick runs fixed
phases: consensus-period bookkeeping, expiry sweeps, message deliveries in
(tick, send-order) priority, actor steps, mining wakeups, then end-of-tick
digest journaling, load checks, and invariant checks. All randomness comes
from labeled child RNGs of the scenario seed, so two runs with the same
config are bit-identical.
"""

from __future__ import annotations

import heapq
from random import Random
from typing import Dict, List, Optional, Set, Tuple

from ..arb import Mesh
from ..crypto import Certificate, KeyPair, PublicKey, hash_bytes, issue_certificate
from ..ledger import LedgerConfig, Miner
from ..meter import SmartMeter, provision_meter
from ..transactions import CTPTx, ERCTx
from .actors import (
    Actor,
    BackboneActor,
    ConsumerActor,
    MinerActor,
    OfferState,
    ProducerActor,
)
from .config import ScenarioConfig
from .messages import (
    BlockGossip,
    ClaimGossip,
    JoinRequest,
    Routed,
    TxGossip,
    encode_routed_payload,
)
from .metrics import Metrics


def child_rng(seed: int, label: str) -> Random:
    """Independent deterministic stream for one actor or purpose."""
    digest = hash_bytes(f"{seed}/{label}".encode())
    return Random(int.from_bytes(digest[:8], "big"))


class World:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.metrics = Metrics()
        self.now = 0
        self._seq = 0
        self._queue: List[Tuple[int, int, str, object]] = []
        self.actors: Dict[str, Actor] = {}
        self.miner_actors: List[MinerActor] = []
        self.step_actors: List[Actor] = []
        self._loss_rng = child_rng(config.seed, "loss")
        # verdict bookkeeping
        self.contracts: Dict[bytes, dict] = {}
        self.ctp_contract: Dict[bytes, bytes] = {}
        self._settled_seen: Set[bytes] = set()
        self.rebalance_events: List[dict] = []
        self.initial_balances: Dict[PublicKey, int] = {}
        self._build()

    # -- construction --------------------------------------------------------

    def _build(self) -> None:
        cfg = self.config
        self.manufacturer_ca = KeyPair.generate(child_rng(cfg.seed, "manufacturer"))
        self.distributor_ca = KeyPair.generate(child_rng(cfg.seed, "distributor"))
        self.manufacturer_ca_pk = self.manufacturer_ca.public
        ledger_config = LedgerConfig(
            burn_threshold=cfg.burn_threshold,
            distributor_ca_pk=self.distributor_ca.public,
            manufacturer_ca_pk=self.manufacturer_ca.public,
        )

        backbone_ids = [f"arb-{i}" for i in range(cfg.backbones)]
        self.mesh = Mesh(
            backbone_ids, cfg.x_initial, cfg.offer_limit, window=cfg.overload_window
        )
        for node_id in backbone_ids:
            self.actors[node_id] = BackboneActor(node_id, self, node_id)

        for i in range(cfg.miners):
            keypair = KeyPair.generate(child_rng(cfg.seed, f"miner/{i}"))
            miner = Miner(keypair, ledger_config, cfg.consensus_period)
            actor = MinerActor(f"miner-{i}", self, miner, reference=(i == 0))
            actor.period_rng = child_rng(cfg.seed, f"miner/{i}/period")
            self.actors[actor.id] = actor
            self.miner_actors.append(actor)

        self.meter_directory: List[PublicKey] = []
        producers: List[ProducerActor] = []
        consumers: List[ConsumerActor] = []

        for i in range(cfg.producers):
            behavior = self._producer_behavior(i)
            producers.append(self._make_producer(f"producer-{i}", i, behavior))
        for i in range(cfg.prosumers):
            producers.append(
                self._make_producer(f"prosumer-{i}.producer", cfg.producers + i, "honest")
            )

        consumer_count = (
            cfg.chatter_nodes if cfg.attack == "routing_overload" else cfg.consumers
        )
        for i in range(consumer_count):
            behavior = self._consumer_behavior(i)
            consumers.append(self._make_consumer(f"consumer-{i}", i, behavior, None))
        for i in range(cfg.prosumers):
            sibling = producers[cfg.producers + i]
            consumers.append(
                self._make_consumer(
                    f"prosumer-{i}.consumer", consumer_count + i, "honest", sibling
                )
            )

        self.producer_actors = producers
        self.consumer_actors = consumers
        self.step_actors = [*producers, *consumers]
        for actor in self.step_actors:
            self.actors[actor.id] = actor

        self.initial_total_coin = self.miner_actors[0].miner.ledger.total_coin()
        self.network_actor_ids = [m.id for m in self.miner_actors] + [
            a.id for a in self.step_actors
        ]

    def _producer_behavior(self, index: int) -> str:
        attack = self.config.attack
        if attack == "malicious_producer":
            return "silent"
        if attack == "coe_forgery" and index == 0:
            return "forger"
        return "honest"

    def _consumer_behavior(self, index: int) -> str:
        attack = self.config.attack
        if attack == "malicious_consumer":
            return ("no_ctp", "bad_hash", "silent")[index % 3]
        if attack == "double_spend":
            return "double_spend"
        if attack == "negotiation_flood":
            return "flood" if index == 0 else "honest"
        if attack == "routing_overload":
            return "chatter"
        return "honest"

    def _make_producer(self, actor_id: str, index: int, behavior: str) -> ProducerActor:
        cfg = self.config
        rng = child_rng(cfg.seed, f"producer/{index}")
        meter = SmartMeter(
            provision_meter(self.manufacturer_ca, rng),
            child_rng(cfg.seed, f"producer/{index}/meter"),
        )
        self.meter_directory.append(meter.public)
        offers = []
        base_tick = 2 + index
        if behavior == "forger":
            base_tick = max(60, cfg.ticks // 4)
        for k in range(cfg.supplies_per_producer):
            offers.append(
                OfferState(
                    keypair=KeyPair.generate(rng),
                    amount=cfg.supply_kwh,
                    posted_price=cfg.supply_unit_price,
                    negotiable=True,
                    start_tick=base_tick + 2 * k,
                )
            )
        return ProducerActor(
            actor_id, self, meter, owns_meter=True, rng=rng, offers=offers, behavior=behavior
        )

    def _make_consumer(
        self,
        actor_id: str,
        index: int,
        behavior: str,
        sibling_producer: Optional[ProducerActor],
    ) -> ConsumerActor:
        cfg = self.config
        rng = child_rng(cfg.seed, f"consumer/{index}")
        account = KeyPair.generate(rng)
        meter: Optional[SmartMeter] = None
        owns_meter = False
        sibling_pks: Set[bytes] = set()
        if sibling_producer is not None:
            meter = sibling_producer.meter  # prosumer: both roles share one meter
            sibling_pks = {o.keypair.public for o in sibling_producer.offers}
        elif behavior in ("honest", "no_ctp", "bad_hash", "silent"):
            meter = SmartMeter(
                provision_meter(self.manufacturer_ca, rng),
                child_rng(cfg.seed, f"consumer/{index}/meter"),
            )
            owns_meter = True
            self.meter_directory.append(meter.public)
        max_trades = 8
        if behavior in ("no_ctp", "bad_hash", "silent"):
            max_trades = 1
        for miner in self.miner_actors:
            miner.miner.ledger.seed_account(account.public, cfg.initial_balance)
        self.initial_balances[account.public] = cfg.initial_balance
        return ConsumerActor(
            actor_id,
            self,
            account,
            meter,
            owns_meter,
            rng,
            behavior=behavior,
            max_trades=max_trades,
            start_delay=15 + 12 * index,  # offset trade starts to cut offer races
            offer_preference=index,
            sibling_pks=sibling_pks,
        )

    # -- messaging ------------------------------------------------------------

    def send(self, dest_id: str, payload: object, delay: int = 1) -> None:
        if delay < 1:
            raise ValueError("messages travel at least one tick")
        if (
            self.config.message_loss_rate > 0.0
            and self._loss_rng.random() < self.config.message_loss_rate
        ):
            self.metrics.bump("messages_lost")
            return
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay, self._seq, dest_id, payload))

    def backbone_actor_id(self, node_id: str) -> str:
        return node_id

    def send_join(self, actor: Actor, join) -> None:
        dest = self.mesh.table.owner_of(join.pk)
        self.send(dest, JoinRequest(join=join, reply_to=actor.id))

    def send_routed(self, actor: Actor, from_pk: PublicKey, dest_pk: PublicKey, payload) -> None:
        entry = self.mesh.table.owner_of(from_pk)
        self.metrics.bump("messages_routed")
        self.metrics.bump("naive_broadcast_messages", len(self.network_actor_ids) - 1)
        env = Routed(
            dest_pk=dest_pk,
            payload=encode_routed_payload(payload),
            origin=actor.id,
            trace=[actor.id],
        )
        self.send(entry, env)

    def broadcast_tx(self, tx) -> None:
        if isinstance(tx, CTPTx):
            self.ctp_contract[tx.t_id] = tx.contract_hash
        gossip = TxGossip(tx)
        for dest in self.network_actor_ids:
            self.send(dest, gossip)

    def broadcast_claim(self, claim) -> None:
        gossip = ClaimGossip(claim)
        for miner in self.miner_actors:
            self.send(miner.id, gossip)

    def broadcast_block(self, block) -> None:
        gossip = BlockGossip(block)
        for dest in self.network_actor_ids:
            self.send(dest, gossip)

    # -- registries -------------------------------------------------------------

    def distributor_certificate(self, pk: PublicKey) -> Certificate:
        return issue_certificate(self.distributor_ca, pk)

    def register_agreement(self, contract_hash: bytes, **fields) -> None:
        record = self.contracts.setdefault(
            contract_hash, {"contract_hash": contract_hash, "settled": 0, "counted": False}
        )
        for key, value in fields.items():
            if value is not None:
                record[key] = value
        if (
            not record["counted"]
            and "producer_actor" in record
            and "consumer_actor" in record
        ):
            record["counted"] = True
            self.metrics.bump("contracts_agreed")

    def meter_for_contract(self, contract_hash: bytes) -> Optional[SmartMeter]:
        record = self.contracts.get(contract_hash)
        return record.get("meter") if record else None

    def on_settlement(self, erc: ERCTx) -> None:
        if erc.ctp_id in self._settled_seen:
            return
        self._settled_seen.add(erc.ctp_id)
        self.metrics.bump("settlements")
        contract_hash = self.ctp_contract.get(erc.ctp_id)
        if contract_hash and contract_hash in self.contracts:
            self.contracts[contract_hash]["settled"] += 1

    def pick_verifier_meter(self, own_pk: PublicKey, rng: Random) -> Optional[PublicKey]:
        candidates = sorted(pk for pk in self.meter_directory if pk != own_pk)
        if not candidates:
            return None
        return rng.choice(candidates)

    def pick_ping_target(self, rng: Random) -> Optional[PublicKey]:
        if not self.meter_directory:
            return None
        targets = sorted(self.meter_directory)
        if self.config.routing_skew:
            return targets[0]  # every ping hammers one routing value
        return rng.choice(targets)

    @property
    def ledger_view(self):
        return self.miner_actors[0].miner.ledger

    # -- main loop -------------------------------------------------------------------

    def run(self) -> Metrics:
        cfg = self.config
        for now in range(cfg.ticks):
            self.now = now
            if now % cfg.consensus_period == 0:
                for actor in self.miner_actors:
                    actor.miner.start_period(now, actor.period_rng)
            for actor in self.miner_actors:
                released = actor.miner.ledger.expire_ctps(now)
                if actor.reference and released:
                    self.metrics.bump("ctp_expired", len(released))
            while self._queue and self._queue[0][0] <= now:
                _, _, dest, payload = heapq.heappop(self._queue)
                target = self.actors.get(dest)
                if target is not None:
                    target.on_message(payload, now)
            for actor in self.step_actors:
                actor.step(now)
            for actor in self.miner_actors:
                if actor.miner.next_mine_at == now:
                    actor.mine(now)
            for actor in self.miner_actors:
                actor.miner.record_tick_digest(now)
            self._maybe_rebalance(now)
            self._tick_checks(now)
        self._finalize()
        return self.metrics

    # -- end-of-tick work ---------------------------------------------------------

    def _maybe_rebalance(self, now: int) -> None:
        cfg = self.config
        if self.mesh.table.x >= cfg.max_x:
            return
        hot_id, hot_load = None, -1
        for node_id in sorted(self.mesh.nodes):
            load = self.mesh.nodes[node_id].window_load()
            if load > hot_load:
                hot_id, hot_load = node_id, load
        if hot_load <= cfg.overload_threshold:
            return
        new_x = self.mesh.table.x + 1
        histogram: Dict[int, int] = {}
        for node in self.mesh.nodes.values():
            for value, count in node.window_histogram(new_x).items():
                histogram[value] = histogram.get(value, 0) + count
        old_table = self.mesh.table
        share_before = old_table.value_share(hot_id) / old_table.space
        self.mesh.widen(new_x, histogram, overloaded=hot_id)
        share_after = self.mesh.table.value_share(hot_id) / self.mesh.table.space
        for node in self.mesh.nodes.values():
            node.recent.clear()
        self.metrics.bump("rebalances")
        self.rebalance_events.append(
            {
                "tick": now,
                "hot": hot_id,
                "hot_load": hot_load,
                "x_before": old_table.x,
                "x_after": new_x,
                "share_before": share_before,
                "share_after": share_after,
            }
        )

    def _tick_checks(self, now: int) -> None:
        reference = self.miner_actors[0].miner.ledger
        pending_total = sum(tx.price for tx, _ in reference.ctp_db.entries.values())
        available_total = reference.total_coin() - pending_total
        if available_total + pending_total != self.initial_total_coin:
            self.metrics.bump("conservation_violations")
        for actor in self.miner_actors:
            ledger = actor.miner.ledger
            per_pk: Dict[PublicKey, int] = {}
            for tx, _ in ledger.ctp_db.entries.values():
                per_pk[tx.pk] = per_pk.get(tx.pk, 0) + tx.price
            for pk, pending in per_pk.items():
                if pending > ledger.coin_balance(pk):
                    self.metrics.bump("safety_violations")

    def _finalize(self) -> None:
        reference = self.miner_actors[0]
        self.metrics.bump("chain_height", len(reference.miner.chain))
        self.metrics.bump("ctp_pending_end", len(reference.miner.ledger.ctp_db))
        self.metrics.bump("ctp_settled", len(reference.miner.ledger.settlements))
        for node_id in sorted(self.mesh.nodes):
            self.metrics.per_backbone_load[node_id] = self.mesh.nodes[node_id].handled
        self.metrics.note("x_final", self.mesh.table.x)
        self.metrics.note("seed", self.config.seed)
        self.metrics.note("attack", self.config.attack)

    def chain_dump(self) -> bytes:
        return self.miner_actors[0].miner.chain.dump_bytes()
