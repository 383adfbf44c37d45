"""Peer-to-peer energy trading protocol library and simulator.

Layers, bottom up:

* :mod:`gridtrade.crypto` - hashing, signatures, certificates, public-key
  encryption, Merkle trees with inclusion proofs.
* :mod:`gridtrade.transactions` - the five wire messages and their
  canonical byte encoding.
* :mod:`gridtrade.ledger` - accounts, the pending commit-to-pay database,
  blocks carrying the pending-DB digest, time-based mining, settlement.
* :mod:`gridtrade.arb` - routing backbone keyed by public-key prefixes.
* :mod:`gridtrade.meter` - smart meters: anonymous attestation and
  delivery receipts.
* :mod:`gridtrade.sim` - deterministic discrete-event simulator with
  honest and adversarial scenarios, plus the command-line interface.
"""

__version__ = "0.1.0"
