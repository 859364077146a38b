"""Ledger transactions and their length-prefixed wire encoding."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

from ..digests import ZERO_DIGEST, canonical_json, digest, is_hex_digest
from ..errors import ValidationError


class TxKind(str, enum.Enum):
    GENESIS = "Genesis"
    MINT = "Mint"
    METADATA_UPDATE = "MetadataUpdate"
    OWNERSHIP_TRANSFER = "OwnershipTransfer"


# Wire order; tx_id is a digest over every later field.
FIELDS = (
    "tx_id", "kind", "identity_id", "sequence_digest", "proxy_locator", "owner_id",
    "actor_id", "ref", "parents", "issuer_node", "logical_timestamp",
)


class MalformedTransaction(ValidationError):
    pass


@dataclass(frozen=True)
class Transaction:
    """One ledger entry.

    ``owner_id`` is the initial owner for a Mint and the new owner for an
    OwnershipTransfer; ``actor_id`` is whoever authorized it. ``ref`` is the
    tx_id of the ownership state a transfer spends (the Mint or the previous
    transfer), so two transfers with the same ``ref`` conflict.
    """

    kind: TxKind
    identity_id: str
    sequence_digest: str
    parents: tuple
    issuer_node: str
    logical_timestamp: int
    proxy_locator: str = ""
    owner_id: str = ""
    actor_id: str = ""
    ref: str = ""
    tx_id: str = ""

    def body(self) -> list:
        return [
            TxKind(self.kind).value, self.identity_id, self.sequence_digest, self.proxy_locator,
            self.owner_id, self.actor_id, self.ref, list(self.parents), self.issuer_node,
            int(self.logical_timestamp),
        ]

    def compute_id(self) -> str:
        return digest(self.body())

    def sealed(self) -> "Transaction":
        return replace(self, kind=TxKind(self.kind), parents=tuple(self.parents), tx_id=self.compute_id())

    def is_well_formed(self) -> bool:
        try:
            return (
                len(self.parents) == 2
                and all(is_hex_digest(p) for p in self.parents)
                and is_hex_digest(self.tx_id)
                and self.tx_id == self.compute_id()
            )
        except (TypeError, ValueError):
            return False

    def to_record(self) -> list:
        return [self.tx_id, *self.body()]


def make_genesis() -> Transaction:
    return Transaction(TxKind.GENESIS, "", ZERO_DIGEST, (ZERO_DIGEST, ZERO_DIGEST), "genesis", 0).sealed()


GENESIS = make_genesis()


def encode(tx: Transaction) -> bytes:
    """``<decimal byte length>:<JSON array of FIELDS>`` with no separator after."""
    body = canonical_json(tx.to_record()).encode("utf-8")
    return str(len(body)).encode("ascii") + b":" + body


def encode_many(txs) -> bytes:
    return b"".join(encode(t) for t in txs)


def _from_record(rec) -> Transaction:
    if not isinstance(rec, list) or len(rec) != len(FIELDS):
        raise MalformedTransaction("record does not have the expected field count")
    d = dict(zip(FIELDS, rec))
    try:
        tx = Transaction(
            kind=TxKind(d["kind"]), identity_id=d["identity_id"], sequence_digest=d["sequence_digest"],
            parents=tuple(d["parents"]), issuer_node=d["issuer_node"],
            logical_timestamp=int(d["logical_timestamp"]), proxy_locator=d["proxy_locator"],
            owner_id=d["owner_id"], actor_id=d["actor_id"], ref=d["ref"], tx_id=d["tx_id"],
        )
    except (ValueError, TypeError) as exc:
        raise MalformedTransaction(str(exc)) from None
    if not tx.is_well_formed():
        raise MalformedTransaction(f"tx_id {str(d['tx_id'])[:12]}... does not match contents")
    return tx


def decode(data: bytes):
    """Split a byte stream into records; yields ``Transaction`` or ``MalformedTransaction``.

    A framing error (bad length prefix) ends the stream, since record
    boundaries after it cannot be trusted.
    """
    pos = 0
    while pos < len(data):
        colon = data.find(b":", pos)
        if colon < 0 or not data[pos:colon].isdigit():
            yield MalformedTransaction(f"bad length prefix at byte {pos}")
            return
        n = int(data[pos:colon])
        body = data[colon + 1: colon + 1 + n]
        pos = colon + 1 + n
        if len(body) != n:
            yield MalformedTransaction("truncated record")
            return
        try:
            yield _from_record(json.loads(body.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            yield MalformedTransaction(f"unparseable record: {exc}")
        except MalformedTransaction as exc:
            yield exc
