"""Ledger nodes: tip selection, validated submission, gossip and confirmation."""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

import numpy as np

from ..errors import AuthorizationError, UniquenessViolation, UnknownAssetError, ValidationError
from .dag import DagLedger
from .transaction import GENESIS, MalformedTransaction, Transaction, TxKind, decode, encode_many


@dataclass(frozen=True)
class ConsensusConfig:
    confirmation_weight_threshold: int = 10
    adversary_fraction: float = 0.0
    alpha: float = 0.5  # tip-selection bias

    def __post_init__(self):
        if int(self.confirmation_weight_threshold) != self.confirmation_weight_threshold or self.confirmation_weight_threshold < 1:
            raise ValidationError("confirmation_weight_threshold must be an integer >= 1")
        if not 0.0 <= self.adversary_fraction < 1.0:
            raise ValidationError("adversary_fraction must lie in [0, 1)")
        if not self.alpha >= 0:
            raise ValidationError("alpha must be non-negative")


class LedgerNode:
    def __init__(self, node_id: str, peers=(), honest: bool = True, rng_seed: int = 0,
                 config: ConsensusConfig | None = None, genesis: Transaction = GENESIS):
        self.node_id = node_id
        self.ledger = DagLedger(genesis)
        self.peers = set(peers)
        self.honest = honest
        self.rng_seed = rng_seed
        self.rng = random.Random(rng_seed)
        self.config = config or ConsensusConfig()
        self.pending: dict[str, Transaction] = {}  # orphans awaiting parents
        self.withheld: set = set()  # never gossiped (adversarial nodes only)
        self.dropped = 0
        self.clock = 0

    def __repr__(self):
        return f"LedgerNode({self.node_id!r}, txs={len(self.ledger)}, honest={self.honest})"

    def known(self) -> set:
        return set(self.ledger.transactions) | set(self.pending)


# --------------------------------------------------------------------------
# tip selection


def softmax_choice(weights, alpha: float, rng: random.Random) -> int:
    """Index drawn with probability proportional to ``exp(alpha * weight)``."""
    top = max(weights)
    probs = [math.exp(alpha * (w - top)) for w in weights]
    return rng.choices(range(len(weights)), weights=probs, k=1)[0]


def tip_scores(ledger: DagLedger, tips) -> list:
    """Score each tip by the size of the sub-DAG it extends.

    A tip's own cumulative weight is always 1, so the bias is applied to its
    past-cone size: tips built on the heavier part of the DAG win.
    """
    return [ledger.past_cone_size(t) for t in tips]


def select_tips(node: LedgerNode, alpha: float | None = None):
    alpha = node.config.alpha if alpha is None else alpha
    tips = sorted(node.ledger.tips, key=node.ledger.index)
    if len(tips) == 1:
        return tips[0], tips[0]
    scores = tip_scores(node.ledger, tips)
    a = tips[softmax_choice(scores, alpha, node.rng)]
    b = tips[softmax_choice(scores, alpha, node.rng)]
    return a, b


# --------------------------------------------------------------------------
# confirmation


class ConfirmationView:
    """Threshold confirmation with double-mint / double-transfer resolution.

    Among conflicting transactions that all pass the threshold the heaviest
    wins (ties: smaller tx_id); the rest are excluded, as are transfers that
    spend an excluded ownership state.
    """

    def __init__(self, ledger: DagLedger, threshold: int):
        self.ledger = ledger
        self.threshold = threshold
        self.excluded = self._losers()

    def _passes(self, t):
        return self.ledger.weight(t) >= self.threshold

    def _pick(self, group, losers):
        contenders = [t for t in group if self._passes(t)]
        if len(contenders) > 1:
            winner = min(contenders, key=lambda t: (-self.ledger.weight(t), t))
            losers.update(t for t in contenders if t != winner)

    def _losers(self) -> set:
        led, losers = self.ledger, set()
        for group in led.mints.values():
            if len(group) > 1:
                self._pick(group, losers)
        for group in led.spends.values():
            if len(group) > 1:
                self._pick(group, losers)
        frontier = list(losers)
        while frontier:
            nxt = []
            for ref in frontier:
                for t in led.spends.get(ref, ()):
                    if t not in losers and self._passes(t):
                        losers.add(t)
                        nxt.append(t)
            frontier = nxt
        return losers

    def is_confirmed(self, tx_id: str) -> bool:
        return tx_id in self.ledger and self._passes(tx_id) and tx_id not in self.excluded

    def all(self) -> frozenset:
        w = self.ledger.weights_array()
        order = self.ledger.order
        return frozenset(order[i] for i in np.nonzero(w >= self.threshold)[0]) - self.excluded

    def owner(self, identity_id: str):
        """``(owner_id, state_tx_id)`` from confirmed Mint/transfers, or None."""
        led = self.ledger
        mints = [m for m in led.mints.get(identity_id, ()) if self.is_confirmed(m)]
        if not mints:
            return None
        state = mints[0]
        owner = led.transactions[state].owner_id
        while True:
            nxt = [t for t in led.spends.get(state, ()) if self.is_confirmed(t)]
            if not nxt:
                return owner, state
            state = nxt[0]
            owner = led.transactions[state].owner_id


def confirmation(node: LedgerNode, config: ConsensusConfig | None = None) -> ConfirmationView:
    cfg = config or node.config
    return ConfirmationView(node.ledger, cfg.confirmation_weight_threshold)


def confirmed_set(node: LedgerNode, config: ConsensusConfig | None = None) -> frozenset:
    return confirmation(node, config).all()


def current_owner(node: LedgerNode, identity_id: str, config: ConsensusConfig | None = None):
    res = confirmation(node, config).owner(identity_id)
    return res[0] if res else None


# --------------------------------------------------------------------------
# submission


def submit(node: LedgerNode, kind, identity_id: str, sequence_digest: str, proxy_locator: str = "",
           owner_id: str = "", actor_id: str = "", config: ConsensusConfig | None = None) -> Transaction:
    """Validate against ``node``'s view, attach to two tips, insert locally.

    Mint: ``owner_id`` is the first owner. OwnershipTransfer: ``actor_id``
    must be the confirmed current owner and ``owner_id`` is the recipient.
    """
    kind = TxKind(kind)
    led = node.ledger
    ref = ""
    if kind == TxKind.MINT:
        if led.mints.get(identity_id):
            raise UniquenessViolation(f"identity {identity_id!r} already minted")
        if not owner_id:
            raise ValidationError("a Mint needs an owner")
        actor_id = actor_id or owner_id
    elif kind in (TxKind.METADATA_UPDATE, TxKind.OWNERSHIP_TRANSFER):
        if not led.mints.get(identity_id):
            raise UnknownAssetError(f"no Mint for identity {identity_id!r}")
        if kind == TxKind.OWNERSHIP_TRANSFER:
            held = confirmation(node, config).owner(identity_id)
            if held is None:
                raise AuthorizationError(f"ownership of {identity_id!r} is not yet confirmed")
            owner, ref = held
            if actor_id != owner:
                raise AuthorizationError(f"{actor_id!r} is not the owner of {identity_id!r}")
            if not owner_id:
                raise ValidationError("an OwnershipTransfer needs a recipient")
            if led.spends.get(ref):
                raise UniquenessViolation(f"ownership state of {identity_id!r} already has a pending transfer")
    else:
        raise ValidationError(f"cannot submit {kind.value} transactions")
    parents = select_tips(node)
    node.clock = max(node.clock, *(led.transactions[p].logical_timestamp for p in parents)) + 1
    tx = Transaction(kind, identity_id, sequence_digest, parents, node.node_id, node.clock,
                     proxy_locator=proxy_locator if kind == TxKind.MINT else "",
                     owner_id=owner_id if kind != TxKind.METADATA_UPDATE else "",
                     actor_id=actor_id, ref=ref).sealed()
    led.add(tx)
    return tx


# --------------------------------------------------------------------------
# gossip


def receive(node: LedgerNode, data: bytes) -> int:
    """Decode a gossip payload, insert what can be inserted; returns #new."""
    for item in decode(data):
        if isinstance(item, MalformedTransaction):
            node.dropped += 1
        elif item.tx_id not in node.ledger and item.tx_id not in node.pending:
            node.pending[item.tx_id] = item
    return _flush_pending(node)


def _flush_pending(node: LedgerNode) -> int:
    added, progress = 0, True
    while progress and node.pending:
        progress = False
        for tx_id in list(node.pending):
            tx = node.pending[tx_id]
            if all(p in node.ledger for p in tx.parents):
                del node.pending[tx_id]
                node.ledger.add(tx)
                node.clock = max(node.clock, tx.logical_timestamp)
                added += 1
                progress = True
    return added


def gossip_round(nodes) -> list:
    """One synchronous round: every node pushes to every peer what the peer lacks.

    Sets are snapshotted at the start of the round and deliveries applied
    at the end, so information travels one hop per round.
    """
    by_id = {n.node_id: n for n in nodes}
    known = {n.node_id: n.known() for n in nodes}
    inbox = {n.node_id: [] for n in nodes}
    for n in sorted(nodes, key=lambda n: n.node_id):
        sendable = [t for t in n.ledger.order if t not in n.withheld]
        for peer_id in sorted(n.peers):
            if peer_id not in by_id:
                continue
            peer_known = known[peer_id]
            missing = [n.ledger.transactions[t] for t in sendable if t not in peer_known]
            if missing:
                inbox[peer_id].append(encode_many(missing))
    for n in nodes:
        for payload in inbox[n.node_id]:
            receive(n, payload)
    return nodes


def quiesce(nodes, max_rounds: int = 1000) -> int:
    """Gossip until no node learns anything new; returns rounds used."""
    for r in range(1, max_rounds + 1):
        before = [len(n.ledger) + len(n.pending) for n in nodes]
        gossip_round(nodes)
        if [len(n.ledger) + len(n.pending) for n in nodes] == before:
            return r
    return max_rounds


# --------------------------------------------------------------------------
# topologies


def connect(nodes, edges):
    by_id = {n.node_id: n for n in nodes}
    for a, b in edges:
        by_id[a].peers.add(b)
        by_id[b].peers.add(a)
    return nodes


def line_edges(ids):
    return list(zip(ids, ids[1:]))


def full_edges(ids):
    return [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]


def random_connected_edges(ids, rng: random.Random, extra: float = 0.25):
    """Random spanning tree plus each remaining pair with probability ``extra``."""
    order = list(ids)
    rng.shuffle(order)
    edges = {tuple(sorted((order[i], order[rng.randrange(i)]))) for i in range(1, len(order))}
    for a, b in full_edges(sorted(ids)):
        if (a, b) not in edges and rng.random() < extra:
            edges.add((a, b))
    return sorted(edges)


def make_network(n: int, topology: str = "full", seed: int = 0, config: ConsensusConfig | None = None,
                 prefix: str = "n"):
    ids = [f"{prefix}{i}" for i in range(n)]
    nodes = [LedgerNode(i, rng_seed=hash_seed(seed, i), config=config) for i in ids]
    if topology == "full":
        edges = full_edges(ids)
    elif topology == "line":
        edges = line_edges(ids)
    elif topology == "random":
        edges = random_connected_edges(ids, random.Random(hash_seed(seed, "topology")))
    else:
        raise ValidationError(f"unknown topology {topology!r}")
    return connect(nodes, edges)


def hash_seed(*parts) -> int:
    """Stable 64-bit seed derived from arbitrary parts (``hash()`` is salted)."""
    h = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")
