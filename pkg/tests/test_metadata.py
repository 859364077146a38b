import random

import pytest
from dataclasses import replace

from cpsseq.config import load_config
from cpsseq.digests import ZERO_DIGEST
from cpsseq.errors import IntegrityError, ValidationError
from cpsseq.identification import IdentityRegistry, characterize
from cpsseq.metadata import (
    BrokenAt,
    EventKind,
    MetadataBundle,
    SensorMetadata,
    SnapshotSource,
    StateSnapshot,
    Valid,
    append_event,
    compose_sequence,
    dump_bundle,
    load_bundle,
    verify_bundle,
)

from support import mutate_event, random_bundle

KEY = {"cut_depth_1": 2.0, "cut_depth_2": 3.5, "cut_depth_3": 1.0, "cut_depth_4": 4.0, "cut_depth_5": 2.5,
       "wear_index": 0.10, "material_score": 0.9}


@pytest.fixture
def identity():
    cfg = load_config()
    ident, _ = IdentityRegistry().mint_or_resolve(characterize("key", KEY, cfg.schemas))
    return ident


def test_first_event_chains_to_zero_digest():
    b = append_event(MetadataBundle(), EventKind.ACQUISITION, "alice", payload={"where": "shop"})
    ev = b.provenance[0]
    assert ev.event_id == 1
    assert ev.prev_digest == ZERO_DIGEST
    assert ev.digest == ev.compute_digest()
    assert isinstance(verify_bundle(b), Valid)


def test_chain_links_and_ids_increase():
    b = random_bundle(random.Random(1), 8)
    ids = [e.event_id for e in b.provenance]
    assert ids == list(range(1, 9))
    for prev, cur in zip(b.provenance, b.provenance[1:]):
        assert cur.prev_digest == prev.digest


def test_empty_bundle_is_valid():
    assert verify_bundle(MetadataBundle())


def test_append_refuses_a_broken_chain():
    b = random_bundle(random.Random(3), 4)
    broken, _, _ = mutate_event(b, random.Random(5))
    with pytest.raises(IntegrityError):
        append_event(broken, EventKind.MAINTENANCE, "alice")


def test_timestamps_may_not_go_backwards():
    b = append_event(MetadataBundle(), EventKind.ACQUISITION, "alice", logical_timestamp=5)
    with pytest.raises(ValidationError):
        append_event(b, EventKind.MAINTENANCE, "alice", logical_timestamp=4)
    assert append_event(b, EventKind.MAINTENANCE, "alice", logical_timestamp=5).provenance[-1].logical_timestamp == 5


def test_payload_must_be_serializable():
    with pytest.raises(ValidationError):
        append_event(MetadataBundle(), EventKind.ACQUISITION, "alice", payload={"x": object()})


def test_unknown_kind_is_rejected():
    with pytest.raises(ValueError):
        append_event(MetadataBundle(), "Teleport", "alice")


@pytest.mark.parametrize("geo", [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.1), (0.0, -181.0)])
def test_geospatial_bounds(geo):
    with pytest.raises(ValidationError):
        SensorMetadata("cam", "v1", {}, geo)


def test_geospatial_edges_are_allowed():
    SensorMetadata("cam", "v1", {}, (90.0, -180.0))


@pytest.mark.parametrize("seed", range(40))
def test_single_field_mutation_is_caught_at_or_before(seed):
    rng = random.Random(seed)
    b = random_bundle(rng)
    tampered, pos, field = mutate_event(b, rng)
    res = verify_bundle(tampered)
    assert isinstance(res, BrokenAt), field
    assert res.position <= pos


def test_broken_at_names_the_tampered_event():
    b = random_bundle(random.Random(9), 5)
    events = list(b.provenance)
    events[2] = replace(events[2], actor_id="mallory")
    res = verify_bundle(replace(b, provenance=tuple(events)))
    assert (res.event_id, res.position) == (3, 2)
    assert "digest" in res.reason


def test_state_snapshot_is_not_chained_but_is_in_head_digest():
    b = random_bundle(random.Random(11), 3).with_state(StateSnapshot({"wear_index": (0.2, "1")}, 10))
    other = b.with_state(StateSnapshot({"wear_index": (0.3, "1")}, 10))
    assert verify_bundle(other)
    assert b.head_digest() != other.head_digest()


def test_snapshot_as_of_is_monotone():
    b = MetadataBundle().with_state(StateSnapshot({"x": (1.0, "m")}, 5, SnapshotSource.PROXY_ESTIMATE))
    with pytest.raises(ValidationError):
        b.with_state(StateSnapshot({"x": (1.0, "m")}, 4))


def test_snapshot_rejects_non_finite_values():
    with pytest.raises(ValidationError):
        StateSnapshot({"x": (float("nan"), "m")}, 1)


def test_sequence_digest_binds_identity_bundle_and_locator(identity):
    b = random_bundle(random.Random(2), 3)
    seq = compose_sequence(identity, b, "proxy://a")
    assert seq.digest == compose_sequence(identity, b, "proxy://a").digest
    assert seq.digest != compose_sequence(identity, b, "proxy://b").digest
    longer = append_event(b, EventKind.MAINTENANCE, "alice")
    assert seq.digest != compose_sequence(identity, longer, "proxy://a").digest


def test_compose_refuses_broken_bundle(identity):
    b, _, _ = mutate_event(random_bundle(random.Random(4), 3), random.Random(0))
    with pytest.raises(IntegrityError):
        compose_sequence(identity, b)


def test_jsonl_round_trip():
    b = random_bundle(random.Random(21), 6).with_state(StateSnapshot({"wear_index": (0.4, "1")}, 99))
    text = dump_bundle(b)
    assert len(text.splitlines()) == 7
    back = load_bundle(text)
    assert back.head_digest() == b.head_digest()
    assert verify_bundle(back)


def test_jsonl_import_detects_tampering():
    b = random_bundle(random.Random(22), 4)
    text = dump_bundle(b).replace('"alice"', '"mallory"').replace('"bob"', '"mallory"').replace('"proxy"', '"mallory"')
    with pytest.raises(IntegrityError):
        load_bundle(text)
    assert load_bundle(text, verify=False) is not None


def test_jsonl_import_reports_line_numbers():
    with pytest.raises(ValidationError, match="line 2"):
        load_bundle(dump_bundle(append_event(MetadataBundle(), EventKind.ACQUISITION, "alice")) + "{not json}\n")
