"""Metadata bundles: a hash-chained provenance log plus a current-state
snapshot, and their composition with an identity into a CPS sequence."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .digests import ZERO_DIGEST, canonical_json, digest
from .errors import IntegrityError, ValidationError


class EventKind(str, enum.Enum):
    ACQUISITION = "Acquisition"
    MODIFICATION = "Modification"
    MAINTENANCE = "Maintenance"
    CUSTODY_TRANSFER = "CustodyTransfer"
    CONDITION_TRIGGER = "ConditionTrigger"


class SnapshotSource(str, enum.Enum):
    PROXY_ESTIMATE = "ProxyEstimate"
    DIRECT_OBSERVATION = "DirectObservation"


@dataclass(frozen=True)
class SensorMetadata:
    sensor_details: str
    device_variant: str
    clock_info: Mapping = field(default_factory=dict)  # {"source": ..., "reading": ...}
    geospatial: tuple | None = None  # (lat, lon) degrees

    def __post_init__(self):
        if self.geospatial is not None:
            lat, lon = (float(v) for v in self.geospatial)
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise ValidationError(f"geospatial ({lat}, {lon}) out of range")
            object.__setattr__(self, "geospatial", (lat, lon))
        object.__setattr__(self, "clock_info", dict(self.clock_info))

    def to_json(self) -> dict:
        return {
            "sensor_details": self.sensor_details,
            "device_variant": self.device_variant,
            "clock_info": dict(self.clock_info),
            "geospatial": list(self.geospatial) if self.geospatial is not None else None,
        }

    @classmethod
    def from_json(cls, d) -> "SensorMetadata | None":
        if d is None:
            return None
        geo = d.get("geospatial")
        return cls(d["sensor_details"], d["device_variant"], d.get("clock_info", {}), tuple(geo) if geo else None)


@dataclass(frozen=True)
class ProvenanceEvent:
    event_id: int
    kind: EventKind
    logical_timestamp: int
    actor_id: str
    sensor_metadata: SensorMetadata | None
    payload: Mapping
    prev_digest: str
    digest: str

    def body(self) -> dict:
        """Every field except ``digest``; the input of the event digest."""
        return {
            "event_id": self.event_id,
            "kind": EventKind(self.kind).value if isinstance(self.kind, EventKind) else self.kind,
            "logical_timestamp": self.logical_timestamp,
            "actor_id": self.actor_id,
            "sensor_metadata": self.sensor_metadata.to_json() if self.sensor_metadata else None,
            "payload": dict(self.payload),
            "prev_digest": self.prev_digest,
        }

    def compute_digest(self) -> str:
        return digest(self.body())

    def to_json(self) -> dict:
        return {**self.body(), "digest": self.digest}

    @classmethod
    def from_json(cls, d) -> "ProvenanceEvent":
        return cls(
            int(d["event_id"]), EventKind(d["kind"]), int(d["logical_timestamp"]), d["actor_id"],
            SensorMetadata.from_json(d.get("sensor_metadata")), dict(d.get("payload", {})),
            d["prev_digest"], d["digest"],
        )


@dataclass(frozen=True)
class StateSnapshot:
    state: Mapping  # name -> (value, unit)
    as_of: int
    source: SnapshotSource = SnapshotSource.DIRECT_OBSERVATION

    def __post_init__(self):
        clean = {}
        for name, vu in dict(self.state).items():
            value, unit = vu
            if not math.isfinite(float(value)):
                raise ValidationError(f"state {name!r} is not finite")
            clean[name] = (float(value), str(unit))
        object.__setattr__(self, "state", clean)
        object.__setattr__(self, "source", SnapshotSource(self.source))

    def to_json(self) -> dict:
        return {
            "state": {k: [v, u] for k, (v, u) in sorted(self.state.items())},
            "as_of": self.as_of,
            "source": self.source.value,
        }

    @classmethod
    def from_json(cls, d) -> "StateSnapshot":
        return cls({k: tuple(v) for k, v in d["state"].items()}, int(d["as_of"]), d["source"])


@dataclass(frozen=True)
class Valid:
    ok = True

    def __bool__(self):
        return True


@dataclass(frozen=True)
class BrokenAt:
    event_id: int
    position: int  # index into the provenance list
    reason: str = ""
    ok = False

    def __bool__(self):
        return False


@dataclass(frozen=True)
class MetadataBundle:
    provenance: tuple = ()
    current_state: StateSnapshot | None = None

    def __post_init__(self):
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return len(self.provenance)

    @property
    def last_digest(self) -> str:
        return self.provenance[-1].digest if self.provenance else ZERO_DIGEST

    def head_digest(self) -> str:
        """Digest over every stored field of every event and the snapshot."""
        h = ZERO_DIGEST
        for ev in self.provenance:
            h = digest({"prev": h, "record": ev.to_json()})
        state = self.current_state.to_json() if self.current_state else None
        return digest({"provenance": h, "state": state})

    def with_state(self, snapshot: StateSnapshot) -> "MetadataBundle":
        if self.current_state is not None and snapshot.as_of < self.current_state.as_of:
            raise ValidationError(
                f"snapshot as_of {snapshot.as_of} precedes current {self.current_state.as_of}"
            )
        return replace(self, current_state=snapshot)


def verify_bundle(bundle: MetadataBundle):
    """``Valid()`` or ``BrokenAt`` naming the first event whose link fails."""
    prev_digest, prev_id = ZERO_DIGEST, None
    for pos, ev in enumerate(bundle.provenance):
        if prev_id is not None and not ev.event_id > prev_id:
            return BrokenAt(ev.event_id, pos, "event_id not increasing")
        if ev.prev_digest != prev_digest:
            return BrokenAt(ev.event_id, pos, "prev_digest does not match predecessor")
        try:
            recomputed = ev.compute_digest()
        except (TypeError, ValueError) as exc:
            return BrokenAt(ev.event_id, pos, f"unencodable event: {exc}")
        if ev.digest != recomputed:
            return BrokenAt(ev.event_id, pos, "digest does not match contents")
        prev_digest, prev_id = ev.digest, ev.event_id
    return Valid()


def append_event(bundle: MetadataBundle, kind, actor_id: str, sensor_metadata: SensorMetadata | None = None,
                 payload: Mapping | None = None, logical_timestamp: int | None = None) -> MetadataBundle:
    """Return a new bundle with one event chained onto ``bundle``."""
    check = verify_bundle(bundle)
    if not check:
        raise IntegrityError(f"refusing to append: chain broken at event {check.event_id} ({check.reason})")
    last = bundle.provenance[-1] if bundle.provenance else None
    ts_floor = last.logical_timestamp if last else 0
    ts = ts_floor + 1 if logical_timestamp is None else int(logical_timestamp)
    if ts < ts_floor:
        raise ValidationError(f"logical timestamp {ts} precedes previous event ({ts_floor})")
    payload = dict(payload or {})
    try:
        canonical_json(payload)
    except (TypeError, ValueError):
        raise ValidationError("payload must be JSON-serializable") from None
    draft = ProvenanceEvent(
        event_id=(last.event_id + 1) if last else 1,
        kind=EventKind(kind),
        logical_timestamp=ts,
        actor_id=str(actor_id),
        sensor_metadata=sensor_metadata,
        payload=payload,
        prev_digest=bundle.last_digest,
        digest="",
    )
    event = replace(draft, digest=draft.compute_digest())
    return replace(bundle, provenance=bundle.provenance + (event,))


@dataclass(frozen=True)
class CPSSequence:
    identity: object  # identification.Identity
    bundle: MetadataBundle
    proxy_locator: str = ""

    @property
    def digest(self) -> str:
        return digest(
            {
                "identity": self.identity.digest,
                "bundle": self.bundle.head_digest(),
                "locator": self.proxy_locator,
            }
        )


def compose_sequence(identity, bundle: MetadataBundle, proxy_locator: str = "") -> CPSSequence:
    check = verify_bundle(bundle)
    if not check:
        raise IntegrityError(f"bundle broken at event {check.event_id} ({check.reason})")
    return CPSSequence(identity, bundle, proxy_locator)


# --------------------------------------------------------------------------
# line-delimited export: one JSON record per line, events first, then state


def dump_bundle(bundle: MetadataBundle) -> str:
    lines = [canonical_json({"record": "event", **ev.to_json()}) for ev in bundle.provenance]
    if bundle.current_state is not None:
        lines.append(canonical_json({"record": "state", **bundle.current_state.to_json()}))
    return "".join(line + "\n" for line in lines)


def load_bundle(text: str, verify: bool = True) -> MetadataBundle:
    events, state = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "event":
                events.append(ProvenanceEvent.from_json(rec))
            elif kind == "state":
                state = StateSnapshot.from_json(rec)
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    bundle = MetadataBundle(tuple(events), state)
    if verify:
        check = verify_bundle(bundle)
        if not check:
            raise IntegrityError(f"imported bundle broken at event {check.event_id} ({check.reason})")
    return bundle
