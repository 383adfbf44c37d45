"""Wire messages: construction, canonical encoding, structural validation."""

from random import Random

import pytest

from gridtrade.crypto import (
    KeyPair,
    MerkleProof,
    hash_bytes,
    issue_certificate,
    merkle_build,
    merkle_prove,
)
from gridtrade.transactions import (
    ContractTerms,
    DecodeError,
    GENESIS_CERTIFICATE,
    GENESIS_COIN_BURN,
    TAG_NEGOTIATION,
    build_and_sign,
    check_encoded,
    check_structure,
    compute_contract_hash,
    decode_canonical,
    encode_canonical,
    make_ctp,
    make_erc,
    make_genesis,
    make_negotiation,
    make_supply_energy,
)

RNG = Random(0xACE)
KEYS = [KeyPair.generate(RNG) for _ in range(4)]


def sample_txs(rng: Random, keypair: KeyPair):
    """One random instance of each message kind."""
    ca = KEYS[3]
    cert = issue_certificate(ca, keypair.public)
    genesis = make_genesis(GENESIS_CERTIFICATE, cert.to_bytes(), keypair)
    supply = make_supply_energy(
        hash_bytes(rng.randbytes(8)),
        rng.randrange(1, 1000),
        rng.randrange(0, 100),
        rng.random() < 0.5,
        keypair,
    )
    negotiation = make_negotiation(
        KEYS[1].public,
        rng.randrange(0, 500),
        rng.randrange(0, 2),
        rng.randrange(1, 9),
        keypair,
    )
    ts = rng.randrange(0, 1000)
    ctp = make_ctp(ts, ts + rng.randrange(1, 500), rng.randrange(1, 10_000),
                   hash_bytes(rng.randbytes(8)), keypair)
    pool = [KeyPair.generate(rng) for _ in range(4)]
    tree = merkle_build([p.public for p in pool])
    vm = KEYS[2]
    from gridtrade.crypto import sign as crypto_sign

    erc = make_erc(
        time_stamp=ts,
        ctp_id=ctp.t_id,
        price=ctp.price,
        coe_root=tree.root,
        coe_vm_sign=crypto_sign(vm, tree.root),
        coe_vm_cert=issue_certificate(ca, vm.public),
        coe_pk=vm.public,
        merkle_hashes=merkle_prove(tree, 1),
        keypair=pool[1],
    )
    return [genesis, supply, negotiation, ctp, erc]


class TestEncoding:
    def test_roundtrip_all_kinds(self):
        rng = Random(1)
        for trial in range(100):
            for tx in sample_txs(rng, KEYS[trial % 2]):
                assert decode_canonical(encode_canonical(tx)) == tx

    def test_injective_over_corpus(self):
        rng = Random(2)
        corpus = []
        for _ in range(40):
            corpus.extend(sample_txs(rng, KEYS[0]))
        distinct_txs = set(corpus)
        encodings = {encode_canonical(tx) for tx in corpus}
        assert len(encodings) == len(distinct_txs)

    def test_expiry_alone_changes_encoding(self):
        a = make_ctp(10, 110, 60, hash_bytes(b"c"), KEYS[0])
        b = make_ctp(10, 111, 60, hash_bytes(b"c"), KEYS[0])
        assert encode_canonical(a) != encode_canonical(b)

    def test_stable_across_runs_same_seed(self):
        def build(seed):
            rng = Random(seed)
            kp = KeyPair.generate(rng)
            return encode_canonical(
                make_ctp(5, 50, rng.randrange(1, 100), hash_bytes(rng.randbytes(4)), kp)
            )

        assert build(77) == build(77)

    def test_decode_garbage(self):
        with pytest.raises(DecodeError):
            decode_canonical(b"")
        with pytest.raises(DecodeError):
            decode_canonical(b"\xff" + b"\x00" * 40)
        good = encode_canonical(make_ctp(1, 2, 3, hash_bytes(b"x"), KEYS[0]))
        with pytest.raises(DecodeError):
            decode_canonical(good[:-1])
        with pytest.raises(DecodeError):
            decode_canonical(good + b"\x00")


class TestConstruction:
    def test_build_and_sign_dispatch(self):
        tx = build_and_sign(
            "ctp",
            dict(time_stamp=1, expiry_time=101, price=9, contract_hash=hash_bytes(b"t")),
            KEYS[0],
        )
        assert check_structure(tx) == (True, None)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_and_sign("bogus", {}, KEYS[0])

    def test_ctp_expiry_must_exceed_timestamp(self):
        make_ctp(10, 110, 60, hash_bytes(b"c"), KEYS[0])
        with pytest.raises(ValueError):
            make_ctp(10, 10, 60, hash_bytes(b"c"), KEYS[0])
        with pytest.raises(ValueError):
            make_ctp(10, 9, 60, hash_bytes(b"c"), KEYS[0])

    def test_negotiation_field_domains(self):
        with pytest.raises(ValueError):
            make_negotiation(KEYS[1].public, 5, 2, 1, KEYS[0])
        with pytest.raises(ValueError):
            make_negotiation(KEYS[1].public, 5, 0, 0, KEYS[0])

    def test_supply_amount_positive(self):
        with pytest.raises(ValueError):
            make_supply_energy(hash_bytes(b"p"), 0, 5, True, KEYS[0])

    def test_genesis_burn_evidence_shape(self):
        make_genesis(GENESIS_COIN_BURN, (500).to_bytes(8, "big"), KEYS[0])
        with pytest.raises(ValueError):
            make_genesis(GENESIS_COIN_BURN, b"xx", KEYS[0])


class TestCheckStructure:
    def test_fresh_transactions_pass(self):
        rng = Random(3)
        for tx in sample_txs(rng, KEYS[0]):
            ok, reason = check_structure(tx)
            assert ok, reason

    def test_supply_price_tamper_detected(self):
        from dataclasses import replace

        supply = make_supply_energy(hash_bytes(b"p"), 10, 5, True, KEYS[0])
        tampered = replace(supply, energy_price=6)
        ok, reason = check_structure(tampered)
        assert not ok and reason == "t_id mismatch"

    def test_erc_bad_inclusion_proof(self):
        # signed consistently, but the proof covers a different leaf
        rng = Random(4)
        from gridtrade.crypto import sign as crypto_sign

        ca, vm = KEYS[3], KEYS[2]
        pool = [KeyPair.generate(rng) for _ in range(4)]
        tree = merkle_build([p.public for p in pool])
        erc = make_erc(
            time_stamp=5,
            ctp_id=hash_bytes(b"ctp"),
            price=60,
            coe_root=tree.root,
            coe_vm_sign=crypto_sign(vm, tree.root),
            coe_vm_cert=issue_certificate(ca, vm.public),
            coe_pk=vm.public,
            merkle_hashes=merkle_prove(tree, 0),  # wrong leaf for pool[1]
            keypair=pool[1],
        )
        ok, reason = check_structure(erc)
        assert not ok and reason == "bad inclusion proof"

    def test_negotiation_status_two_decodes_as_invalid(self):
        msg = make_negotiation(KEYS[1].public, 5, 1, 1, KEYS[0])
        raw = bytearray(encode_canonical(msg))
        assert raw[0] == TAG_NEGOTIATION
        # status is the third length-prefixed field after t_id and dest pk
        offset = 1 + (4 + 32) + (4 + 64) + (4 + 8) + 4
        assert raw[offset] == 1
        raw[offset] = 2
        ok, reason = check_encoded(bytes(raw))
        assert not ok and reason.startswith("decode:")

    def test_single_bit_mutations_rejected(self):
        # every bit of a signed commitment and supply posting
        for tx in (
            make_ctp(10, 110, 60, hash_bytes(b"c"), KEYS[0]),
            make_supply_energy(hash_bytes(b"p"), 10, 5, True, KEYS[0]),
        ):
            raw = encode_canonical(tx)
            for bit in range(len(raw) * 8):
                mutated = bytearray(raw)
                mutated[bit // 8] ^= 1 << (bit % 8)
                ok, _ = check_encoded(bytes(mutated))
                assert not ok, f"bit {bit} accepted"

    def test_single_bit_mutations_rejected_erc_sampled(self):
        rng = Random(5)
        erc = sample_txs(rng, KEYS[0])[4]
        raw = encode_canonical(erc)
        for bit in range(0, len(raw) * 8, 7):
            mutated = bytearray(raw)
            mutated[bit // 8] ^= 1 << (bit % 8)
            ok, _ = check_encoded(bytes(mutated))
            assert not ok, f"bit {bit} accepted"


class TestGoldenVectors:
    """Frozen hex dumps guard the wire format against accidental change."""

    CTP_GOLDEN = (
        "0400000020af7622f8ca39b7b6de3e1c869133dae4a1c189ae489d2c3a0748ea58c153ee52"
        "00000008000000000000000a00000008000000000000006e00000008000000000000003c"
        "000000202133237aa7d4c9fa096168d633c08d0e375a309df5858e153a13e5192e701eb0"
        "0000004003a107bff3ce10be1d70dd18e74bc09967e4d6309ba50d5f1ddc8664125531b8"
        "0dd8b4d9f549e18cde974086b36d057f8aa4434b5b197c0f7a81d9e1d1575c7600000040"
        "d8bf64d7d3ef75d0dc31fab28f27e1889436ba954a53117cee3afdbeac6b57d314d0f0cf"
        "8ee6eddecdaf902ed6f2327d4f7a940b0984b8d57bfefecbf421a409"
    )
    SUPPLY_GOLDEN = (
        "020000002005c0447f72db3ab529b2c9affdad6e86b3cd5de5b08e51644cbae45acba0b2b9"
        "00000020ff817c9853ae8273babe7e34af59b745fa47b69750136d6baae205e4c4f4f0b4"
        "00000008000000000000000a0000000800000000000000050000000101"
        "0000004003a107bff3ce10be1d70dd18e74bc09967e4d6309ba50d5f1ddc8664125531b8"
        "0dd8b4d9f549e18cde974086b36d057f8aa4434b5b197c0f7a81d9e1d1575c7600000040"
        "56524dcbffe3f97b501fa6fd0d98a303a9672be6ae71a84c9da7df82d91266b6dd11be64"
        "6d686fa93b21506744f316d6e0a7899e62fbb3ccf553d4a0d75dfb0a"
    )

    def test_ctp_golden(self):
        from gridtrade.transactions import decode_hex, encode_hex

        kp = KeyPair.from_seed(bytes(range(32)))
        ctp = make_ctp(10, 110, 60, hash_bytes(b"golden-contract"), kp)
        assert encode_hex(ctp) == self.CTP_GOLDEN
        assert decode_hex(self.CTP_GOLDEN) == ctp

    def test_supply_golden(self):
        from gridtrade.transactions import decode_hex, encode_hex

        kp = KeyPair.from_seed(bytes(range(32)))
        supply = make_supply_energy(hash_bytes(b"golden-parent"), 10, 5, True, kp)
        assert encode_hex(supply) == self.SUPPLY_GOLDEN
        assert decode_hex(self.SUPPLY_GOLDEN) == supply

    def test_bad_hex_rejected(self):
        from gridtrade.transactions import decode_hex

        with pytest.raises(DecodeError):
            decode_hex("zz")


class TestContractHash:
    def test_both_sides_agree(self):
        terms = ContractTerms(10, 6, 60, bytes(32))
        again = ContractTerms(10, 6, 60, bytes(32))
        assert compute_contract_hash(terms) == compute_contract_hash(again)

    def test_nonce_changes_hash(self):
        a = ContractTerms(10, 6, 60, bytes(32))
        b = ContractTerms(10, 6, 60, bytes(31) + b"\x01")
        assert compute_contract_hash(a) != compute_contract_hash(b)

    def test_total_must_match_product(self):
        with pytest.raises(ValueError):
            compute_contract_hash(ContractTerms(10, 6, 61, bytes(32)))

    def test_nonce_length_enforced(self):
        with pytest.raises(ValueError):
            ContractTerms(10, 6, 60, bytes(16))

    def test_collision_trials(self):
        rng = Random(6)
        for _ in range(1000):
            amount = rng.randrange(1, 50)
            price = rng.randrange(1, 50)
            nonce_a, nonce_b = rng.randbytes(32), rng.randbytes(32)
            a = ContractTerms(amount, price, amount * price, nonce_a)
            b = ContractTerms(amount, price, amount * price, nonce_b)
            same = compute_contract_hash(a) == compute_contract_hash(b)
            assert same == (a == b)
