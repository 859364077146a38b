"""The transaction DAG with incrementally maintained cumulative weights."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .transaction import GENESIS, Transaction, TxKind


class MissingParent(ValidationError):
    pass


class DagLedger:
    """Append-only DAG of transactions.

    Every transaction keeps its past cone (itself plus all ancestors) as an
    integer bitmask over insertion indices. Inserting a transaction ORs its
    parents' masks and adds one to the weight of every set bit, which keeps
    ``cumulative_weight`` exact without walking the graph in Python.
    """

    def __init__(self, genesis: Transaction = GENESIS):
        self.transactions: dict[str, Transaction] = {}
        self.approvals: dict[str, set] = {}
        self.tips: set = set()
        self.genesis = genesis.tx_id
        self.mints: dict[str, list] = {}  # identity_id -> Mint tx_ids
        self.spends: dict[str, list] = {}  # ref -> OwnershipTransfer tx_ids
        self.order: list[str] = []
        self._index: dict[str, int] = {}
        self._past: list[int] = []
        self._w = np.zeros(64, dtype=np.int64)
        self._insert(genesis, ())

    def __len__(self):
        return len(self.order)

    def __contains__(self, tx_id):
        return tx_id in self._index

    def _insert(self, tx: Transaction, parent_ids):
        k = len(self.order)
        if k >= len(self._w):
            self._w = np.concatenate([self._w, np.zeros(len(self._w), dtype=np.int64)])
        past = 1 << k
        for p in parent_ids:
            past |= self._past[self._index[p]]
        raw = np.frombuffer(past.to_bytes((k + 8) // 8, "little"), dtype=np.uint8)
        self._w[: k + 1] += np.unpackbits(raw, bitorder="little")[: k + 1]
        self._past.append(past)
        self._index[tx.tx_id] = k
        self.order.append(tx.tx_id)
        self.transactions[tx.tx_id] = tx
        self.approvals[tx.tx_id] = set()
        for p in set(parent_ids):
            self.approvals[p].add(tx.tx_id)
            self.tips.discard(p)
        self.tips.add(tx.tx_id)
        if tx.kind == TxKind.MINT:
            self.mints.setdefault(tx.identity_id, []).append(tx.tx_id)
        elif tx.kind == TxKind.OWNERSHIP_TRANSFER:
            self.spends.setdefault(tx.ref, []).append(tx.tx_id)

    def add(self, tx: Transaction) -> bool:
        """Insert ``tx``; False if already present. Parents must be present."""
        if tx.tx_id in self._index:
            return False
        if not tx.is_well_formed() or tx.kind == TxKind.GENESIS:
            raise ValidationError(f"malformed transaction {tx.tx_id[:12]}")
        missing = [p for p in tx.parents if p not in self._index]
        if missing:
            raise MissingParent(f"parents not in ledger: {[m[:12] for m in missing]}")
        # parents precede tx, so no insertion can close a cycle
        self._insert(tx, tx.parents)
        return True

    def weight(self, tx_id: str) -> int:
        return int(self._w[self._index[tx_id]])

    @property
    def cumulative_weight(self) -> dict:
        w = self._w
        return {t: int(w[i]) for i, t in enumerate(self.order)}

    def weights_array(self) -> np.ndarray:
        return self._w[: len(self.order)]

    def past_cone_size(self, tx_id: str) -> int:
        return self._past[self._index[tx_id]].bit_count()

    def ancestors(self, tx_id: str) -> set:
        mask = self._past[self._index[tx_id]] & ~(1 << self._index[tx_id])
        return {self.order[i] for i in range(mask.bit_length()) if mask >> i & 1}

    def approves(self, later: str, earlier: str) -> bool:
        """True if ``later`` directly or indirectly approves ``earlier``."""
        return later != earlier and bool(self._past[self._index[later]] >> self._index[earlier] & 1)

    def index(self, tx_id: str) -> int:
        return self._index[tx_id]

    def to_dot(self, weights: bool = True) -> str:
        """Graphviz description; edges point from approver to approved."""
        lines = ["digraph dag {", "  rankdir=RL;"]
        for t in self.order:
            tx = self.transactions[t]
            label = f"{tx.kind.value}\\n{t[:8]}"
            if tx.identity_id:
                label += f"\\n{tx.identity_id}"
            if weights:
                label += f"\\nw={self.weight(t)}"
            lines.append(f'  "{t[:12]}" [label="{label}"];')
        for t in self.order:
            tx = self.transactions[t]
            if tx.kind == TxKind.GENESIS:
                continue
            for p in sorted(set(tx.parents)):
                lines.append(f'  "{t[:12]}" -> "{p[:12]}";')
        lines.append("}")
        return "\n".join(lines) + "\n"
