"""Anonymous meter attestation, step by step.

A meter wants to sign delivery receipts without linking them to itself.
It mints a pool of one-time keys, commits to them in a Merkle tree, and
asks a randomly chosen peer meter to endorse the root after checking its
manufacturer certificate. Receipts are then signed with pool keys and
carry a small inclusion proof instead of the meter's identity.

Run:  python demos/01_merkle_attestation.py
"""

from random import Random

from gridtrade.crypto import KeyPair, merkle_build, merkle_prove, merkle_verify
from gridtrade.meter import SmartMeter, provision_meter

rng = Random(7)

print("== the Merkle commitment ==")
pool_keys = [KeyPair.generate(rng) for _ in range(4)]
tree = merkle_build([k.public for k in pool_keys])
print(f"4 one-time keys -> tree of height {tree.height}, root {tree.root.hex()[:16]}...")

proof = merkle_prove(tree, 2)
print(f"proof for leaf 2: {len(proof)} siblings, "
      f"{len(proof.to_bytes())} bytes on the wire")
assert merkle_verify(tree.root, pool_keys[2].public, proof)
print("leaf 2 verifies against the root")

outsider = KeyPair.generate(rng)
assert not merkle_verify(tree.root, outsider.public, proof)
print("a key that never entered the tree does not\n")

print("== the endorsement dance ==")
manufacturer = KeyPair.generate(rng)
requester = SmartMeter(provision_meter(manufacturer, rng), Random(1))
verifier = SmartMeter(provision_meter(manufacturer, rng), Random(2))

pool = requester.generate_key_pool(4)
print(f"requester builds a pool of {len(pool.pairs)} keys, root {pool.root.hex()[:16]}...")

vr = requester.make_verification_request(pool, verifier.public)
print("request sent: root encrypted to the verifier, signed by the requester")

coe = verifier.process_verification_request(vr, manufacturer.public)
print("verifier checked the manufacturer certificate and signed the root")
assert coe.verify(manufacturer.public)
print("anyone can now check the endorsement against the manufacturer's key,")
print("yet nothing in it names the requesting meter")
