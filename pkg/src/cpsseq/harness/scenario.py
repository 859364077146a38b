"""Scenario files: parsing and validation.

A scenario is a JSON document. Two kinds exist.

``"kind": "lifecycle"`` (the default) drives assets through observation,
identification, minting, proxy mirroring, ledger anchoring and scripted
Asset Manager calls::

    {
      "name": "tenant-keys",
      "seed": 7,
      "ticks": 40,
      "catalog": "builtin",                  # or a path relative to the file
      "identification": {"match_threshold": 3.0, "quantization_factor": 6.0,
                         "min_confidence": 0.5, "observation_noise": 0.25},
      "network": {"nodes": 4, "topology": "full"},
      "consensus": {"confirmation_weight_threshold": 5, "alpha": 0.5},
      "qod": {"key": {"wear_index": 0.015, "usage_rate": 0.06}},
      "triggers": {"key": [{"variable": "wear_index", "threshold": 0.7}]},
      "anchor_period": 1,
      "actors": {"owners": ["landlord"], "users": ["tenant-a", "tenant-b"]},
      "assets": [
        {"name": "key-a", "class": "key", "owner": "landlord",
         "answers": "key-transcript",
         "features": {"cut_depth_1": 2.0, ...},
         "initial_state": {"wear_index": 0.10, "usage_rate": 0.5},
         "sensor": {"sensor_details": "...", "device_variant": "...", "geospatial": [lat, lon]},
         "observe": [1, 21],
         "events": [{"tick": 18, "kind": "Maintenance", "actor": "landlord", "payload": {}}]}
      ],
      "actions": [
        {"tick": 15, "verb": "GRANT", "owner": "landlord", "user": "tenant-a",
         "asset": "key-a", "scope": ["MetadataRead"]},
        {"tick": 16, "verb": "QUERY", "user": "tenant-a", "asset": "key-a", "request": "Metadata"},
        {"tick": 20, "verb": "TRANSFER", "owner": "landlord", "new_owner": "tenant-b", "asset": "key-b"}
      ]
    }

``"kind": "attack-sweep"`` runs the parasite double-mint attack over a
list of adversary fractions::

    {"kind": "attack-sweep", "name": "attack-sweep", "seed": 0,
     "attack": {"fractions": [0.1, 0.2], "honest_nodes": 10, "rounds": 5000,
                "runs": 20, "fork_round": 10},
     "consensus": {"confirmation_weight_threshold": 10, "alpha": 0.5}}

Validation errors name the offending location as a JSON path, e.g.
``assets[1].observe``; syntax errors carry ``line:column``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..config import Config, bundled_path, key_transcript, load_config, parse_json, answers_from_json
from ..errors import ConfigurationError, ValidationError
from ..identification import (
    DEFAULT_MATCH_THRESHOLD,
    DEFAULT_MIN_CONFIDENCE,
    DEFAULT_QUANTIZATION_FACTOR,
)
from ..ledger import ConsensusConfig
from ..metadata import EventKind

VERBS = ("GRANT", "REVOKE", "QUERY", "TRANSFER")
LIFECYCLE_KINDS = (EventKind.MODIFICATION.value, EventKind.MAINTENANCE.value)
TOPOLOGIES = ("full", "line", "random")


class ScenarioError(ValidationError):
    """A scenario failed to parse or validate; the message names where."""


@dataclass(frozen=True)
class LifecycleEvent:
    tick: int
    kind: str
    actor: str
    payload: dict


@dataclass(frozen=True)
class AssetSpec:
    name: str
    true_class: str
    owner: str
    answers: tuple
    features: dict
    observe: tuple
    initial_state: dict = field(default_factory=dict)
    sensor: dict | None = None
    events: tuple = ()


@dataclass(frozen=True)
class Action:
    tick: int
    verb: str
    fields: dict  # wire fields; "asset" still names a scenario asset

    def wire(self, identity_of) -> dict:
        req = {"verb": self.verb, **self.fields}
        asset = req.pop("asset")
        req["identity"] = identity_of(asset)
        return req


@dataclass(frozen=True)
class AttackSpec:
    fractions: tuple
    honest_nodes: int = 10
    rounds: int = 5000
    runs: int = 20
    fork_round: int = 10


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    seed: int
    kind: str = "lifecycle"
    ticks: int = 0
    config: Config | None = None
    match_threshold: float = DEFAULT_MATCH_THRESHOLD
    quantization_factor: float = DEFAULT_QUANTIZATION_FACTOR
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    observation_noise: float = 0.25
    nodes: int = 1
    topology: str = "full"
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    qod: dict = field(default_factory=dict)
    triggers: dict = field(default_factory=dict)
    anchor_period: int = 1
    owners: tuple = ()
    users: tuple = ()
    assets: tuple = ()
    actions: tuple = ()
    attack: AttackSpec | None = None
    source: str = "<scenario>"

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))


# --------------------------------------------------------------------------
# small typed readers that report the JSON path on failure


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _obj(v, path):
    if not isinstance(v, dict):
        _fail(path, "expected an object")
    return v


def _list(v, path):
    if not isinstance(v, list):
        _fail(path, "expected a list")
    return v


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    return v


def _num(v, path, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    if positive and not v > 0:
        _fail(path, f"must be positive, got {v}")
    return float(v)


def _str(v, path):
    if not isinstance(v, str) or not v:
        _fail(path, f"expected a non-empty string, got {v!r}")
    return v


def _unknown_keys(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        _fail(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _sorted_ticks(ticks, path):
    if list(ticks) != sorted(ticks):
        _fail(path, "schedule is not sorted by tick")


# --------------------------------------------------------------------------


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = parse_json(text, str(path))
    except ConfigurationError as exc:
        raise ScenarioError(str(exc)) from None
    return scenario_from_dict(data, base_dir=p.parent, source=str(path))


def bundled_scenario(name: str) -> Path:
    ref = bundled_path(f"scenarios/{name}.json")
    if not ref.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Path(str(ref))


def scenario_from_dict(data, base_dir=None, source: str = "<scenario>") -> Scenario:
    d = _obj(data, "$")
    kind = d.get("kind", "lifecycle")
    if kind not in ("lifecycle", "attack-sweep"):
        _fail("kind", f"unknown scenario kind {kind!r}")
    name = _str(d.get("name", Path(source).stem), "name")
    seed = _int(d.get("seed", 0), "seed", lo=0)
    consensus = _consensus(d.get("consensus", {}))
    if kind == "attack-sweep":
        _unknown_keys(d, ("kind", "name", "seed", "attack", "consensus"), "")
        return Scenario(name, seed, kind, consensus=consensus, attack=_attack(d.get("attack")), source=source)

    _unknown_keys(d, ("kind", "name", "seed", "ticks", "catalog", "identification", "network", "consensus",
                      "qod", "triggers", "anchor_period", "actors", "assets", "actions"), "")
    ticks = _int(d.get("ticks", 0), "ticks", lo=0)
    config = _catalog(d.get("catalog", "builtin"), base_dir)

    ident = _obj(d.get("identification", {}), "identification")
    _unknown_keys(ident, ("match_threshold", "quantization_factor", "min_confidence", "observation_noise"),
                  "identification")
    match_threshold = _num(ident.get("match_threshold", DEFAULT_MATCH_THRESHOLD), "identification.match_threshold",
                           positive=True)
    qfactor = _num(ident.get("quantization_factor", DEFAULT_QUANTIZATION_FACTOR),
                   "identification.quantization_factor", positive=True)
    min_conf = _num(ident.get("min_confidence", DEFAULT_MIN_CONFIDENCE), "identification.min_confidence")
    noise = _num(ident.get("observation_noise", 0.25), "identification.observation_noise")
    if noise < 0:
        _fail("identification.observation_noise", "must be non-negative")

    net = _obj(d.get("network", {}), "network")
    _unknown_keys(net, ("nodes", "topology"), "network")
    n_nodes = _int(net.get("nodes", 1), "network.nodes", lo=1)
    topology = net.get("topology", "full")
    if topology not in TOPOLOGIES:
        _fail("network.topology", f"expected one of {TOPOLOGIES}, got {topology!r}")

    classes = set(config.catalog.classes)
    qod = {}
    for label, bounds in _obj(d.get("qod", {}), "qod").items():
        path = f"qod.{label}"
        if label not in config.models:
            _fail(path, f"no generalized model for class {label!r}")
        model = config.models[label]
        bounds = _obj(bounds, path)
        for state in model.state_names:
            if state not in bounds:
                _fail(f"{path}.{state}", "missing bound")
        _unknown_keys(bounds, model.state_names, path)
        qod[label] = {s: _num(bounds[s], f"{path}.{s}", positive=True) for s in model.state_names}

    triggers = {}
    for label, trigs in _obj(d.get("triggers", {}), "triggers").items():
        path = f"triggers.{label}"
        if label not in config.models:
            _fail(path, f"no generalized model for class {label!r}")
        out = []
        for i, t in enumerate(_list(trigs, path)):
            tp = f"{path}[{i}]"
            t = _obj(t, tp)
            _unknown_keys(t, ("variable", "threshold", "direction"), tp)
            var = _str(t.get("variable"), f"{tp}.variable")
            if var not in config.models[label].state_names:
                _fail(f"{tp}.variable", f"unknown state {var!r}")
            direction = t.get("direction", "rising")
            if direction not in ("rising", "falling"):
                _fail(f"{tp}.direction", "expected rising or falling")
            out.append((var, _num(t.get("threshold"), f"{tp}.threshold"), direction))
        triggers[label] = tuple(out)

    anchor_period = _int(d.get("anchor_period", 1), "anchor_period", lo=1)

    actors = _obj(d.get("actors", {}), "actors")
    _unknown_keys(actors, ("owners", "users"), "actors")
    owners = tuple(_str(a, f"actors.owners[{i}]") for i, a in enumerate(_list(actors.get("owners", []), "actors.owners")))
    users = tuple(_str(a, f"actors.users[{i}]") for i, a in enumerate(_list(actors.get("users", []), "actors.users")))
    people = set(owners) | set(users)

    assets = []
    seen = set()
    for i, a in enumerate(_list(d.get("assets", []), "assets")):
        asset = _asset(a, f"assets[{i}]", config, classes, owners, people, ticks)
        if asset.name in seen:
            _fail(f"assets[{i}].name", f"duplicate asset name {asset.name!r}")
        seen.add(asset.name)
        assets.append(asset)

    actions = []
    for i, a in enumerate(_list(d.get("actions", []), "actions")):
        actions.append(_action(a, f"actions[{i}]", seen, people, ticks))
    _sorted_ticks([a.tick for a in actions], "actions")

    return Scenario(
        name=name, seed=seed, kind=kind, ticks=ticks, config=config, match_threshold=match_threshold,
        quantization_factor=qfactor, min_confidence=min_conf, observation_noise=noise, nodes=n_nodes,
        topology=topology, consensus=consensus, qod=qod, triggers=triggers, anchor_period=anchor_period,
        owners=owners, users=users, assets=tuple(assets), actions=tuple(actions), source=source,
    )


def _consensus(c) -> ConsensusConfig:
    c = _obj(c, "consensus")
    _unknown_keys(c, ("confirmation_weight_threshold", "alpha"), "consensus")
    thr = _int(c.get("confirmation_weight_threshold", 10), "consensus.confirmation_weight_threshold", lo=1)
    alpha = _num(c.get("alpha", 0.5), "consensus.alpha")
    if alpha < 0:
        _fail("consensus.alpha", "must be non-negative")
    return ConsensusConfig(thr, 0.0, alpha)


def _attack(a) -> AttackSpec:
    a = _obj(a, "attack")
    _unknown_keys(a, ("fractions", "honest_nodes", "rounds", "runs", "fork_round"), "attack")
    fracs = []
    for i, f in enumerate(_list(a.get("fractions"), "attack.fractions")):
        f = _num(f, f"attack.fractions[{i}]")
        if not 0.0 <= f < 1.0:
            _fail(f"attack.fractions[{i}]", "must lie in [0, 1)")
        fracs.append(f)
    if not fracs:
        _fail("attack.fractions", "must not be empty")
    rounds = _int(a.get("rounds", 5000), "attack.rounds", lo=2)
    return AttackSpec(
        tuple(fracs), _int(a.get("honest_nodes", 10), "attack.honest_nodes", lo=1), rounds,
        _int(a.get("runs", 20), "attack.runs", lo=1), _int(a.get("fork_round", 10), "attack.fork_round", lo=1),
    )


def _catalog(ref, base_dir) -> Config:
    ref = _str(ref, "catalog")
    if ref == "builtin":
        return load_config()
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    try:
        return load_config(path)
    except ConfigurationError as exc:
        raise ScenarioError(f"catalog: {exc}") from None


def _answers(v, path, catalog):
    if v == "key-transcript":
        answers = key_transcript()
    else:
        try:
            answers = answers_from_json(_list(v, path))
        except (ConfigurationError, ValueError) as exc:
            _fail(path, str(exc))
    for i, ans in enumerate(answers):
        if ans.question_id not in catalog.questions:
            _fail(f"{path}[{i}].question_id", f"unknown question {ans.question_id!r}")
    return tuple(answers)


def _asset(a, path, config, classes, owners, people, ticks) -> AssetSpec:
    a = _obj(a, path)
    _unknown_keys(a, ("name", "class", "owner", "answers", "features", "initial_state", "sensor", "observe",
                      "events"), path)
    name = _str(a.get("name"), f"{path}.name")
    label = _str(a.get("class"), f"{path}.class")
    if label not in classes:
        _fail(f"{path}.class", f"class {label!r} is not in the catalog")
    if label not in config.schemas:
        _fail(f"{path}.class", f"class {label!r} has no feature schema")
    owner = _str(a.get("owner"), f"{path}.owner")
    if owners and owner not in owners:
        _fail(f"{path}.owner", f"{owner!r} is not listed in actors.owners")
    answers = _answers(a.get("answers", []), f"{path}.answers", config.catalog)
    feats = _obj(a.get("features"), f"{path}.features")
    for spec in config.schemas[label]:
        if spec.name not in feats:
            _fail(f"{path}.features.{spec.name}", "missing feature")
        v = _num(feats[spec.name], f"{path}.features.{spec.name}")
        if not spec.lower <= v <= spec.upper:
            _fail(f"{path}.features.{spec.name}", f"{v} outside [{spec.lower}, {spec.upper}]")
    _unknown_keys(feats, [s.name for s in config.schemas[label]], f"{path}.features")
    init = _obj(a.get("initial_state", {}), f"{path}.initial_state")
    if init:
        if label not in config.models:
            _fail(f"{path}.initial_state", f"no generalized model for class {label!r}")
        _unknown_keys(init, config.models[label].state_names, f"{path}.initial_state")
        init = {k: _num(v, f"{path}.initial_state.{k}") for k, v in init.items()}
    sensor = a.get("sensor")
    if sensor is not None:
        sensor = _obj(sensor, f"{path}.sensor")
        _unknown_keys(sensor, ("sensor_details", "device_variant", "geospatial"), f"{path}.sensor")
        geo = sensor.get("geospatial")
        if geo is not None:
            geo = _list(geo, f"{path}.sensor.geospatial")
            if len(geo) != 2:
                _fail(f"{path}.sensor.geospatial", "expected [lat, lon]")
            lat = _num(geo[0], f"{path}.sensor.geospatial[0]")
            lon = _num(geo[1], f"{path}.sensor.geospatial[1]")
            if not -90 <= lat <= 90:
                _fail(f"{path}.sensor.geospatial[0]", "latitude outside [-90, 90]")
            if not -180 <= lon <= 180:
                _fail(f"{path}.sensor.geospatial[1]", "longitude outside [-180, 180]")
    observe = tuple(_int(t, f"{path}.observe[{i}]", lo=1) for i, t in enumerate(_list(a.get("observe", []), f"{path}.observe")))
    _sorted_ticks(observe, f"{path}.observe")
    events = []
    for i, e in enumerate(_list(a.get("events", []), f"{path}.events")):
        ep = f"{path}.events[{i}]"
        e = _obj(e, ep)
        _unknown_keys(e, ("tick", "kind", "actor", "payload"), ep)
        kind = e.get("kind")
        if kind not in LIFECYCLE_KINDS:
            _fail(f"{ep}.kind", f"expected one of {LIFECYCLE_KINDS}, got {kind!r}")
        actor = _str(e.get("actor"), f"{ep}.actor")
        if people and actor not in people:
            _fail(f"{ep}.actor", f"unknown actor {actor!r}")
        events.append(LifecycleEvent(_int(e.get("tick"), f"{ep}.tick", lo=1), kind, actor,
                                     _obj(e.get("payload", {}), f"{ep}.payload")))
    _sorted_ticks([e.tick for e in events], f"{path}.events")
    if events and (not observe or events[0].tick <= observe[0]):
        _fail(f"{path}.events[0].tick", "lifecycle events must come after the first observation")
    return AssetSpec(name, label, owner, answers, {k: float(v) for k, v in feats.items()}, observe, init, sensor,
                     tuple(events))


_ACTION_FIELDS = {
    "GRANT": ("owner", "user", "asset", "scope"),
    "REVOKE": ("owner", "user", "asset"),
    "QUERY": ("user", "asset", "request"),
    "TRANSFER": ("owner", "new_owner", "asset"),
}


def _action(a, path, asset_names, people, ticks) -> Action:
    a = _obj(a, path)
    verb = a.get("verb")
    if verb not in VERBS:
        _fail(f"{path}.verb", f"expected one of {VERBS}, got {verb!r}")
    required = _ACTION_FIELDS[verb]
    _unknown_keys(a, ("tick", "verb", "node") + required, path)
    tick = _int(a.get("tick"), f"{path}.tick", lo=1)
    fields = {}
    for key in required:
        if key not in a:
            _fail(f"{path}.{key}", "missing field")
        if key == "scope":
            fields[key] = [_str(s, f"{path}.scope[{i}]") for i, s in enumerate(_list(a[key], f"{path}.scope"))]
            continue
        fields[key] = _str(a[key], f"{path}.{key}")
    if fields["asset"] not in asset_names:
        _fail(f"{path}.asset", f"unknown asset {fields['asset']!r}")
    for key in ("owner", "user", "new_owner"):
        if key in fields and people and fields[key] not in people:
            _fail(f"{path}.{key}", f"unknown actor {fields[key]!r}")
    if "node" in a:
        fields["node"] = _str(a["node"], f"{path}.node")
    return Action(tick, verb, fields)
