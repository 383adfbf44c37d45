"""One honest trade, driven by hand against the ledger.

The atomic pair at the heart of the protocol: a commit-to-pay freezes the
buyer's money without being mined, and the meter's receipt releases it to
the producer. Neither message alone moves a coin.

Run:  python demos/03_honest_trade.py
"""

from random import Random

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

rng = Random(3)
distributor = KeyPair.generate(rng)
manufacturer = KeyPair.generate(rng)
ledger = Ledger(
    LedgerConfig(
        burn_threshold=100,
        distributor_ca_pk=distributor.public,
        manufacturer_ca_pk=manufacturer.public,
    )
)

print("== setting the stage ==")
producer = KeyPair.generate(rng)
genesis = make_genesis(
    GENESIS_CERTIFICATE, issue_certificate(distributor, producer.public).to_bytes(), producer
)
print("producer opens an energy account:", ledger.submit_genesis(genesis).accepted)
supply = make_supply_energy(genesis.t_id, 10, 6, True, producer)
ledger.submit_supply_energy(supply)
print(f"producer posts 10 kWh at 6/kWh; energy balance = "
      f"{ledger.accounts[producer.public].energy_balance} kWh")

consumer = KeyPair.generate(rng)
ledger.seed_account(consumer.public, 100)
print(f"consumer starts with {ledger.coin_balance(consumer.public)} coin")

meter = SmartMeter(provision_meter(manufacturer, rng), Random(5))
meter.generate_key_pool(4)
verifier = SmartMeter(provision_meter(manufacturer, rng), Random(6))
meter.install_coe(
    verifier.process_verification_request(
        meter.make_verification_request(meter.pool, verifier.public), manufacturer.public
    )
)
print("consumer's meter holds an endorsed key pool\n")

print("== commit ==")
terms = ContractTerms(energy_amount=10, unit_price=6, total_price=60, nonce=bytes(32))
ctp = make_ctp(
    time_stamp=10,
    expiry_time=200,
    price=60,
    contract_hash=compute_contract_hash(terms),
    keypair=consumer,
)
print("commit-to-pay admitted:", ledger.submit_ctp(ctp, now=10).accepted)
print(f"balance still {ledger.coin_balance(consumer.public)}, "
      f"but only {ledger.available_balance(consumer.public)} is spendable")
meter.register_contract(terms, ctp)
claim = make_producer_claim(ctp.t_id, ctp.contract_hash, 10, producer)
print("producer matches the contract hash and claims the commitment:",
      ledger.submit_claim(claim).accepted)

print("\n== deliver ==")
for pulse in (4, 6):
    record = meter.record_delivery(ctp.contract_hash, pulse)
    print(f"meter records {pulse} kWh (total {record.delivered}, complete={record.complete})")

print("\n== settle ==")
erc = meter.generate_erc(ctp, now=30)
valid, step = ledger.validate_erc(erc)
print(f"receipt validates: {valid} (signed by one-time key {erc.pk[:6].hex()}...)")
ledger.settle(erc, producer.public)
print(f"consumer: {ledger.coin_balance(consumer.public)} coin, "
      f"producer: {ledger.coin_balance(producer.public)} coin, "
      f"producer energy: {ledger.accounts[producer.public].energy_balance} kWh")
print("replaying the same receipt:", ledger.settle(erc, producer.public).reason)
