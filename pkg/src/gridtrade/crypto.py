"""Cryptographic primitives shared by every layer of the trading protocol.

Provides SHA-256 hashing, deterministic Ed25519 signatures, issuer
certificates, hybrid public-key encryption (X25519 + ChaCha20-Poly1305),
and Merkle trees with inclusion proofs.

Key layout: a public key is 64 bytes, the Ed25519 verify key (32 bytes,
used for signatures and as the routing identity) followed by an X25519
public key (32 bytes, used to encrypt to the holder). Both halves derive
from one 32-byte seed, so key generation from a seeded RNG reproduces the
same keys run after run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from random import Random
from typing import Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

DIGEST_LEN = 32
PUBLIC_KEY_LEN = 64
SIGNATURE_LEN = 64
CERTIFICATE_LEN = 3 * 64

# type aliases; all values are plain bytes of the documented length
HashDigest = bytes
PublicKey = bytes
Signature = bytes

ZERO_DIGEST = b"\x00" * DIGEST_LEN


class DecryptionError(Exception):
    """Ciphertext could not be opened with the supplied private key."""


def hash_bytes(data: bytes) -> HashDigest:
    """SHA-256 digest of ``data`` (32 bytes, deterministic)."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    """Signing + encryption key pair derived from one 32-byte seed."""

    public: PublicKey
    seed: bytes = field(repr=False)

    @staticmethod
    def generate(rng: Optional[Random] = None) -> "KeyPair":
        """Create a fresh pair; with ``rng`` the result is reproducible."""
        if rng is None:
            import secrets

            seed = secrets.token_bytes(32)
        else:
            seed = rng.randbytes(32)
        return KeyPair.from_seed(seed)

    @staticmethod
    def from_seed(seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        ed_priv = Ed25519PrivateKey.from_private_bytes(seed)
        x_priv = X25519PrivateKey.from_private_bytes(_x25519_seed(seed))
        public = _raw_public(ed_priv.public_key()) + _raw_x_public(x_priv.public_key())
        return KeyPair(public=public, seed=seed)

    def _ed_private(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)

    def _x_private(self) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(_x25519_seed(self.seed))


def _x25519_seed(seed: bytes) -> bytes:
    return hash_bytes(seed + b"/encrypt")


def _raw_public(key: Ed25519PublicKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def _raw_x_public(key: X25519PublicKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def sign(keypair: KeyPair, message: bytes) -> Signature:
    """Ed25519 signature over ``message``; deterministic per (key, message)."""
    return keypair._ed_private().sign(message)


def verify(public: PublicKey, message: bytes, signature: Signature) -> bool:
    """True iff ``signature`` was made by the private half of ``public``.

    Total: malformed keys or signatures return False, never raise.
    """
    if not isinstance(public, (bytes, bytearray)) or len(public) != PUBLIC_KEY_LEN:
        return False
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public[:32])).verify(
            bytes(signature), bytes(message)
        )
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Certificate:
    """Issuer's signature binding a subject public key."""

    subject_pk: PublicKey
    issuer_pk: PublicKey
    signature: Signature

    def to_bytes(self) -> bytes:
        return self.subject_pk + self.issuer_pk + self.signature

    @staticmethod
    def from_bytes(data: bytes) -> "Certificate":
        if len(data) != CERTIFICATE_LEN:
            raise ValueError(f"certificate must be {CERTIFICATE_LEN} bytes, got {len(data)}")
        return Certificate(
            subject_pk=data[:64], issuer_pk=data[64:128], signature=data[128:192]
        )


def issue_certificate(issuer: KeyPair, subject_pk: PublicKey) -> Certificate:
    return Certificate(
        subject_pk=subject_pk,
        issuer_pk=issuer.public,
        signature=sign(issuer, subject_pk),
    )


def ca_verify(cert, ca_pk: PublicKey) -> bool:
    """Check a certificate against an expected issuer key.

    Accepts a Certificate or its serialized bytes; wrong issuer, forged
    signature, or truncated input all return False.
    """
    if isinstance(cert, (bytes, bytearray)):
        try:
            cert = Certificate.from_bytes(bytes(cert))
        except ValueError:
            return False
    if not isinstance(cert, Certificate):
        return False
    if cert.issuer_pk != ca_pk:
        return False
    return verify(cert.issuer_pk, cert.subject_pk, cert.signature)


# ---------------------------------------------------------------------------
# public-key encryption


@dataclass(frozen=True)
class AsymCiphertext:
    """Hybrid ciphertext addressed to one public key."""

    recipient_pk: PublicKey
    payload: bytes  # ephemeral X25519 public key (32B) + sealed box

    def to_bytes(self) -> bytes:
        return (
            self.recipient_pk
            + len(self.payload).to_bytes(4, "big")
            + self.payload
        )

    @staticmethod
    def from_bytes(data: bytes) -> "AsymCiphertext":
        if len(data) < PUBLIC_KEY_LEN + 4:
            raise ValueError("truncated ciphertext")
        recipient = data[:PUBLIC_KEY_LEN]
        n = int.from_bytes(data[PUBLIC_KEY_LEN : PUBLIC_KEY_LEN + 4], "big")
        payload = data[PUBLIC_KEY_LEN + 4 :]
        if len(payload) != n:
            raise ValueError("ciphertext length mismatch")
        return AsymCiphertext(recipient_pk=recipient, payload=payload)


def _session_key(shared: bytes, eph_pub: bytes, recipient_pk: PublicKey) -> bytes:
    return hash_bytes(shared + eph_pub + recipient_pk)


def asym_encrypt(
    recipient_pk: PublicKey, plaintext: bytes, rng: Optional[Random] = None
) -> AsymCiphertext:
    """Encrypt to the holder of ``recipient_pk`` (ECIES-style).

    The ephemeral key comes from ``rng`` when given, keeping simulation
    runs reproducible.
    """
    if len(recipient_pk) != PUBLIC_KEY_LEN:
        raise ValueError("recipient public key must be 64 bytes")
    if rng is None:
        import secrets

        eph_seed = secrets.token_bytes(32)
    else:
        eph_seed = rng.randbytes(32)
    eph_priv = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_pub = _raw_x_public(eph_priv.public_key())
    recipient_x = X25519PublicKey.from_public_bytes(recipient_pk[32:])
    shared = eph_priv.exchange(recipient_x)
    key = _session_key(shared, eph_pub, recipient_pk)
    # fresh key per message, so a fixed nonce is safe
    box = ChaCha20Poly1305(key).encrypt(b"\x00" * 12, plaintext, None)
    return AsymCiphertext(recipient_pk=recipient_pk, payload=eph_pub + box)


def asym_decrypt(keypair: KeyPair, ciphertext: AsymCiphertext) -> bytes:
    """Open a ciphertext; raises DecryptionError under any wrong key."""
    payload = ciphertext.payload
    if len(payload) < 32 + 16:
        raise DecryptionError("ciphertext too short")
    eph_pub = payload[:32]
    box = payload[32:]
    try:
        shared = keypair._x_private().exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _session_key(shared, eph_pub, ciphertext.recipient_pk)
        return ChaCha20Poly1305(key).decrypt(b"\x00" * 12, box, None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("decryption failure") from exc


# ---------------------------------------------------------------------------
# Merkle trees

LEFT = 0
RIGHT = 1


@dataclass(frozen=True)
class MerkleProof:
    """Sibling path proving one leaf belongs to a tree.

    Each sibling carries the side it sits on: ``RIGHT`` means the running
    digest is hashed as (current || sibling), ``LEFT`` as (sibling || current).
    """

    leaf_index: int
    siblings: tuple  # of (digest: bytes, side: int)

    def __len__(self) -> int:
        return len(self.siblings)

    def to_bytes(self) -> bytes:
        # leaf_index (4B big-endian) || count (1B) || side (1B) + digest (32B) each
        if len(self.siblings) > 255:
            raise ValueError("proof too long to serialize")
        out = [self.leaf_index.to_bytes(4, "big"), bytes([len(self.siblings)])]
        for digest, side in self.siblings:
            out.append(bytes([side]))
            out.append(digest)
        return b"".join(out)

    @staticmethod
    def from_bytes(data: bytes) -> "MerkleProof":
        if len(data) < 5:
            raise ValueError("truncated proof")
        leaf_index = int.from_bytes(data[:4], "big")
        count = data[4]
        expected = 5 + count * 33
        if len(data) != expected:
            raise ValueError(f"proof length mismatch: want {expected}, got {len(data)}")
        siblings = []
        off = 5
        for _ in range(count):
            side = data[off]
            if side not in (LEFT, RIGHT):
                raise ValueError(f"bad side byte {side}")
            siblings.append((data[off + 1 : off + 33], side))
            off += 33
        return MerkleProof(leaf_index=leaf_index, siblings=tuple(siblings))


@dataclass(frozen=True)
class MerkleTree:
    """Binary hash tree over hashed leaves.

    Leaves are hashed before insertion, internal nodes are
    hash(left || right), and an odd node at any level pairs with a copy of
    itself. A single leaf still goes through one pairing round, so every
    tree has height >= 1.
    """

    levels: tuple  # levels[0] = leaf digests, levels[-1] = (root,)

    @property
    def root(self) -> HashDigest:
        return self.levels[-1][0]

    @property
    def leaf_count(self) -> int:
        return len(self.levels[0])

    @property
    def height(self) -> int:
        return len(self.levels) - 1


def merkle_build(leaves: list) -> MerkleTree:
    """Build a tree over raw leaf byte strings.

    Raises ValueError("empty tree") when no leaves are given.
    """
    if not leaves:
        raise ValueError("empty tree")
    level = [hash_bytes(leaf) for leaf in leaves]
    levels = [tuple(level)]
    while len(level) > 1 or len(levels) == 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(hash_bytes(left + right))
        level = nxt
        levels.append(tuple(level))
    return MerkleTree(levels=tuple(levels))


def merkle_prove(tree: MerkleTree, index: int) -> MerkleProof:
    """Inclusion proof for the leaf at ``index``; sides encode the path."""
    n = tree.leaf_count
    if not 0 <= index < n:
        raise ValueError(f"leaf index {index} out of range for {n} leaves")
    siblings = []
    i = index
    for level in tree.levels[:-1]:
        if i % 2 == 0:
            sib = level[i + 1] if i + 1 < len(level) else level[i]
            siblings.append((sib, RIGHT))
        else:
            siblings.append((level[i - 1], LEFT))
        i //= 2
    return MerkleProof(leaf_index=index, siblings=tuple(siblings))


def merkle_verify(root: HashDigest, leaf: bytes, proof: MerkleProof) -> bool:
    """Fold the hashed leaf through the proof and compare against ``root``.

    Total: any mismatch or malformed proof returns False.
    """
    try:
        current = hash_bytes(leaf)
        for digest, side in proof.siblings:
            if not isinstance(digest, (bytes, bytearray)) or len(digest) != DIGEST_LEN:
                return False
            if side == RIGHT:
                current = hash_bytes(current + digest)
            elif side == LEFT:
                current = hash_bytes(digest + current)
            else:
                return False
        return current == root
    except (TypeError, AttributeError):
        return False
