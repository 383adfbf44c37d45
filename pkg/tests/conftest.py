"""Shared fixtures: a wired ledger with certificate authorities and a
complete honest receipt flow (meter, endorsement, commitment, receipt)."""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

import pytest

from gridtrade.crypto import KeyPair, issue_certificate
from gridtrade.ledger import Ledger, LedgerConfig, make_producer_claim
from gridtrade.meter import SmartMeter, provision_meter
from gridtrade.transactions import (
    ContractTerms,
    GENESIS_CERTIFICATE,
    compute_contract_hash,
    make_ctp,
    make_genesis,
    make_supply_energy,
)


@dataclass
class LedgerRig:
    """A ledger plus the authorities and keys tests keep reaching for."""

    ledger: Ledger
    config: LedgerConfig
    distributor: KeyPair
    manufacturer: KeyPair
    rng: Random

    def certified_genesis(self, keypair: KeyPair):
        cert = issue_certificate(self.distributor, keypair.public)
        return make_genesis(GENESIS_CERTIFICATE, cert.to_bytes(), keypair)

    def open_energy_account(self, keypair: KeyPair):
        genesis = self.certified_genesis(keypair)
        result = self.ledger.submit_genesis(genesis)
        assert result.accepted, result.reason
        return genesis


@pytest.fixture
def rig() -> LedgerRig:
    rng = Random(0xC0FFEE)
    distributor = KeyPair.generate(rng)
    manufacturer = KeyPair.generate(rng)
    config = LedgerConfig(
        burn_threshold=100,
        distributor_ca_pk=distributor.public,
        manufacturer_ca_pk=manufacturer.public,
    )
    return LedgerRig(
        ledger=Ledger(config),
        config=config,
        distributor=distributor,
        manufacturer=manufacturer,
        rng=rng,
    )


@dataclass
class TradeRig:
    """Everything an honest settlement needs, pre-staged."""

    rig: LedgerRig
    producer: KeyPair
    consumer: KeyPair
    consumer_meter: SmartMeter
    verifier_meter: SmartMeter
    terms: ContractTerms
    ctp: object
    claim: object

    def completed_erc(self, now: int = 20):
        meter = self.consumer_meter
        meter.register_contract(self.terms, self.ctp)
        meter.record_delivery(self.ctp.contract_hash, self.terms.energy_amount)
        return meter.generate_erc(self.ctp, now)


@pytest.fixture
def trade(rig: LedgerRig) -> TradeRig:
    rng = rig.rng
    producer = KeyPair.generate(rng)
    rig.open_energy_account(producer)
    genesis_id = rig.ledger.accounts[producer.public].last_tx_id
    supply = make_supply_energy(genesis_id, 10, 6, True, producer)
    assert rig.ledger.submit_supply_energy(supply).accepted

    consumer = KeyPair.generate(rng)
    rig.ledger.seed_account(consumer.public, 100)

    consumer_meter = SmartMeter(provision_meter(rig.manufacturer, rng), Random(11))
    verifier_meter = SmartMeter(provision_meter(rig.manufacturer, rng), Random(12))
    pool = consumer_meter.generate_key_pool(4)
    vr = consumer_meter.make_verification_request(pool, verifier_meter.public)
    coe = verifier_meter.process_verification_request(vr, rig.manufacturer.public)
    consumer_meter.install_coe(coe)

    terms = ContractTerms(energy_amount=10, unit_price=6, total_price=60, nonce=bytes(32))
    ctp = make_ctp(
        time_stamp=10,
        expiry_time=200,
        price=60,
        contract_hash=compute_contract_hash(terms),
        keypair=consumer,
    )
    assert rig.ledger.submit_ctp(ctp, now=10).accepted
    claim = make_producer_claim(ctp.t_id, ctp.contract_hash, 10, producer)
    assert rig.ledger.submit_claim(claim).accepted
    return TradeRig(
        rig=rig,
        producer=producer,
        consumer=consumer,
        consumer_meter=consumer_meter,
        verifier_meter=verifier_meter,
        terms=terms,
        ctp=ctp,
        claim=claim,
    )
