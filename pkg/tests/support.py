"""Generators shared by the unit and acceptance suites."""
from __future__ import annotations

import random
from dataclasses import replace

from cpsseq.metadata import EventKind, MetadataBundle, SensorMetadata, StateSnapshot, append_event

KINDS = list(EventKind)
MUTABLE_FIELDS = ("event_id", "kind", "logical_timestamp", "actor_id", "sensor_metadata", "payload",
                  "prev_digest", "digest")


def random_bundle(rng: random.Random, n_events: int | None = None) -> MetadataBundle:
    n = n_events if n_events is not None else rng.randint(1, 12)
    b = MetadataBundle()
    ts = 0
    for i in range(n):
        ts += rng.randint(0, 3)
        sensor = None
        if rng.random() < 0.5:
            sensor = SensorMetadata(
                f"scanner-{rng.randint(1, 3)}", f"rev-{rng.choice('ABC')}",
                {"source": "tick", "reading": ts},
                (rng.uniform(-90, 90), rng.uniform(-180, 180)) if rng.random() < 0.5 else None,
            )
        payload = {f"k{j}": rng.choice([rng.randint(0, 99), rng.random(), "v", None]) for j in range(rng.randint(0, 3))}
        b = append_event(b, KINDS[0] if i == 0 else rng.choice(KINDS), rng.choice(["alice", "bob", "proxy"]),
                         sensor, payload, ts)
    if rng.random() < 0.5:
        b = b.with_state(StateSnapshot({"wear_index": (rng.random(), "1")}, ts))
    return b


def mutate_event(bundle: MetadataBundle, rng: random.Random):
    """Change one field of one event without re-sealing; returns (bundle, position, field)."""
    pos = rng.randrange(len(bundle.provenance))
    ev = bundle.provenance[pos]
    field = rng.choice(MUTABLE_FIELDS)
    if field == "event_id":
        new = ev.event_id + rng.choice([-1, 1, 7])
    elif field == "kind":
        new = rng.choice([k for k in KINDS if k != ev.kind])
    elif field == "logical_timestamp":
        new = ev.logical_timestamp + rng.choice([-1, 1, 100])
    elif field == "actor_id":
        new = ev.actor_id + "x"
    elif field == "sensor_metadata":
        new = (SensorMetadata("forged", "forged") if ev.sensor_metadata is None
               else replace(ev.sensor_metadata, device_variant=ev.sensor_metadata.device_variant + "!"))
    elif field == "payload":
        new = {**ev.payload, "forged": True}
    elif field == "prev_digest":
        new = ("f" if ev.prev_digest[0] != "f" else "e") + ev.prev_digest[1:]
    else:
        new = ("f" if ev.digest[0] != "f" else "e") + ev.digest[1:]
    events = list(bundle.provenance)
    events[pos] = replace(ev, **{field: new})
    return replace(bundle, provenance=tuple(events)), pos, field


# ------------------------------------------------------------------ ledger

def ledger_parents(node) -> dict:
    """``{tx_id: parents}`` for the oracle; genesis has no parents."""
    led = node.ledger
    return {t: (() if t == led.genesis else led.transactions[t].parents) for t in led.order}


def scattered_network(seed: int, n_nodes: int = 8, n_tx: int = 50, topology: str = "random", config=None):
    """Random topology, ``n_tx`` transactions issued at random nodes with sporadic gossip, then quiesced."""
    from cpsseq.ledger import TxKind, gossip_round, make_network, quiesce, submit

    rng = random.Random(seed)
    nodes = make_network(n_nodes, topology, seed=seed, config=config)
    minted = 0
    for i in range(n_tx):
        node = rng.choice(nodes)
        known = sorted(node.ledger.mints)
        if not known or rng.random() < 0.2:
            minted += 1
            submit(node, TxKind.MINT, f"asset-{seed}-{minted}", f"{i:064x}", owner_id=f"owner-{minted}")
        else:
            submit(node, TxKind.METADATA_UPDATE, rng.choice(known), f"{i:064x}")
        if rng.random() < 0.3:
            gossip_round(nodes)
    quiesce(nodes)
    return nodes


def double_mint_race(seed: int, n_nodes: int = 8, followers: int = 40, config=None):
    """Two nodes mint one identity before hearing of each other, then traffic settles it."""
    from cpsseq.ledger import TxKind, gossip_round, make_network, quiesce, submit

    rng = random.Random(seed)
    nodes = make_network(n_nodes, "random", seed=seed, config=config)
    submit(nodes[0], TxKind.MINT, "background", "0" * 64, owner_id="bg")
    quiesce(nodes)
    a, b = rng.sample(nodes, 2)
    submit(a, TxKind.MINT, "contested", "1" * 64, owner_id="alice")
    submit(b, TxKind.MINT, "contested", "2" * 64, owner_id="bob")
    for i in range(followers):
        submit(rng.choice(nodes), TxKind.METADATA_UPDATE, "background", f"{i + 3:064x}")
        if rng.random() < 0.5:
            gossip_round(nodes)
    quiesce(nodes)
    return nodes
