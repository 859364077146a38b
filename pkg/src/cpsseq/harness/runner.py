"""The global tick loop.

Each tick runs, in order: the manager's tick boundary (stale grants and
handles are dropped), scheduled observations (classify, characterize,
resolve or mint; a mint opens the provenance bundle, starts the proxy and
submits the Mint), scheduled lifecycle events, one proxy step per minted
asset with trigger evaluation, anchoring of changed sequence digests,
scripted Asset Manager requests and one synchronous gossip round.
Invariants are checked at the end of every tick and a violation aborts the
run with a labeled :class:`RunFailure`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..asset_manager import AssetManager
from ..digests import canonical_json, digest
from ..errors import CPSError, LowConfidenceError
from ..identification import IdentityRegistry, Resolution, identify, sigma_distances
from ..ledger import TxKind, attack_sweep, confirmation, gossip_round, make_network, quiesce
from ..ledger.node import hash_seed
from ..metadata import EventKind, MetadataBundle, SensorMetadata, append_event, compose_sequence, verify_bundle
from ..proxy import DataProxy, QualityOfData, Trigger, psd_sqrt
from .scenario import Scenario, load_scenario


class RunFailure(CPSError):
    """A mid-run invariant violation."""

    def __init__(self, label: str, tick: int, message: str):
        super().__init__(f"[{label}] tick {tick}: {message}")
        self.label = label
        self.tick = tick


def _r(x: float) -> float:
    """Round for reporting; keeps reports readable and stable."""
    return float(f"{float(x):.6g}")


@dataclass
class _Live:
    spec: object
    home: str
    identity_id: str | None = None
    proxy: DataProxy | None = None
    truth: np.ndarray | None = None
    sq_err: np.ndarray | None = None
    steps: int = 0


class RunReport:
    """Summary of one run; ``text`` is rendered from ``summary`` alone."""

    def __init__(self, summary: dict):
        self.summary = summary

    @property
    def json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2) + "\n"

    @property
    def text(self) -> str:
        return render_text(self.summary)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(self.json, encoding="utf-8")
        (out / "report.txt").write_text(self.text, encoding="utf-8")
        return out


def run_scenario(scenario, out_dir=None, seed: int | None = None) -> RunReport:
    """Run a scenario (a path or a parsed :class:`Scenario`)."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    if scenario.kind == "attack-sweep":
        report = RunReport(_run_attack_sweep(scenario))
    else:
        report = RunReport(_Run(scenario).run())
    if out_dir is not None:
        report.write(out_dir)
    return report


def _run_attack_sweep(sc: Scenario) -> dict:
    a = sc.attack
    seeds = [sc.seed + i for i in range(a.runs)]
    rows = attack_sweep(a.fractions, seeds, a.honest_nodes, a.rounds, sc.consensus, fork_round=a.fork_round)
    rates = [row["reversion_rate"] for row in rows]
    return {
        "scenario": sc.name,
        "kind": "attack-sweep",
        "seed": sc.seed,
        "attack": {
            "honest_nodes": a.honest_nodes, "rounds": a.rounds, "runs": a.runs, "fork_round": a.fork_round,
            "confirmation_weight_threshold": sc.consensus.confirmation_weight_threshold,
            "alpha": sc.consensus.alpha,
        },
        "table": rows,
        "monotone": all(x <= y for x, y in zip(rates, rates[1:])),
    }


class _Run:
    def __init__(self, sc: Scenario):
        self.sc = sc
        cfg = sc.config
        self.nodes = make_network(sc.nodes, sc.topology, sc.seed, sc.consensus)
        self.manager = AssetManager(self.nodes, config=sc.consensus)
        self.registry = IdentityRegistry(quantization_factor=sc.quantization_factor)
        ids = [n.node_id for n in self.nodes]
        self.live = {a.name: _Live(a, ids[i % len(ids)]) for i, a in enumerate(sc.assets)}
        self.by_identity: dict[str, str] = {}
        self.resolutions: list = []
        self.actions: list = []
        self.checks = {"provenance-chain": 0, "nft-uniqueness": 0, "identity-law": 0}
        self.schemas = cfg.schemas
        self.catalog = cfg.catalog

    # ------------------------------------------------------------------ steps

    def observe(self, t: int, live: _Live):
        sc, spec = self.sc, live.spec
        rng = np.random.default_rng(hash_seed(sc.seed, "observe", spec.name, t))
        obs = {}
        for fs in self.schemas[spec.true_class]:
            v = spec.features[fs.name] + sc.observation_noise * fs.sigma * rng.standard_normal()
            obs[fs.name] = min(max(v, fs.lower), fs.upper)
        try:
            post, fv, ident, kind = identify(
                spec.answers, obs, self.catalog, self.schemas, self.registry,
                min_confidence=sc.min_confidence, match_threshold=sc.match_threshold, at=t,
            )
        except LowConfidenceError as exc:
            self.resolutions.append({"tick": t, "asset": spec.name, "resolution": "LowConfidence",
                                     "detail": str(exc)})
            return
        ref = ident.physical_hash.raw_features
        dist = float(sigma_distances(fv.values, ref.values[None, :], fv.sigmas)[0])
        self.resolutions.append({
            "tick": t, "asset": spec.name, "class": post.top, "confidence": _r(post.confidence),
            "identity_id": ident.identity_id, "resolution": kind.value, "distance": _r(dist),
        })
        self.checks["identity-law"] += 1
        owner_asset = self.by_identity.get(ident.identity_id)
        if live.identity_id is not None and ident.identity_id != live.identity_id:
            raise RunFailure("identity-law", t, f"{spec.name} was {live.identity_id}, now {ident.identity_id}")
        if owner_asset is not None and owner_asset != spec.name:
            raise RunFailure("identity-law", t, f"{spec.name} resolved to {owner_asset}'s identity {ident.identity_id}")
        if kind != Resolution.MINTED:
            return
        self._open(t, live, ident, post)

    def _open(self, t, live: _Live, ident, post):
        sc, spec = self.sc, live.spec
        live.identity_id = ident.identity_id
        self.by_identity[ident.identity_id] = spec.name
        sensor = None
        if spec.sensor is not None:
            geo = spec.sensor.get("geospatial")
            sensor = SensorMetadata(spec.sensor.get("sensor_details", ""), spec.sensor.get("device_variant", ""),
                                    {"source": "scenario-tick", "reading": t}, tuple(geo) if geo else None)
        bundle = append_event(MetadataBundle(), EventKind.ACQUISITION, spec.owner, sensor,
                              {"class": post.top, "confidence": _r(post.confidence),
                               "physical_hash": ident.physical_hash.digest}, t)
        locator = f"proxy://{ident.identity_id}"
        label = post.top
        proxy = None
        if label in sc.config.models:
            model = sc.config.models[label]
            qod = QualityOfData.from_mapping(model, sc.qod[label]) if label in sc.qod else None
            trigs = [Trigger(v, th, d) for v, th, d in sc.triggers.get(label, ())]
            proxy = DataProxy(model, qod=qod, triggers=trigs, class_label=label, locator=locator)
            fv = ident.physical_hash.raw_features
            proxy.specialize({f.name: (f.value, f.noise_sigma) for f in fv.features})
            proxy.state = replace(proxy.state, last_update=t - 1)
            if qod is not None:
                proxy.adapt()
            x0 = model.prior_mean.copy()
            for name, v in spec.initial_state.items():
                x0[model.state_index(name)] = v
            live.truth = x0
            live.sq_err = np.zeros(model.n_states)
        live.proxy = proxy
        self.manager.register(ident, bundle, proxy, locator, spec.owner, node_id=live.home)

    def lifecycle(self, t: int, live: _Live):
        for ev in live.spec.events:
            if ev.tick != t or live.identity_id is None:
                continue
            rec = self.manager.record(live.identity_id)
            self.manager.update_bundle(live.identity_id,
                                       append_event(rec.bundle, ev.kind, ev.actor, payload=ev.payload,
                                                    logical_timestamp=t))

    def step_proxy(self, t: int, live: _Live):
        proxy = live.proxy
        if proxy is None:
            return
        model = proxy.model
        rng = np.random.default_rng(hash_seed(self.sc.seed, "truth", live.spec.name, t))
        live.truth = model.A @ live.truth + psd_sqrt(model.Q) @ rng.standard_normal(model.n_states)
        z = None
        if proxy.policy.samples_at(t):
            ch = list(proxy.policy.active_channels)
            noise = psd_sqrt(model.R) @ rng.standard_normal(model.n_channels)
            z = (model.C @ live.truth + noise)[ch]
        proxy.step(z, tick=t)
        live.sq_err += (proxy.state.x_hat - live.truth) ** 2
        live.steps += 1
        rec = self.manager.record(live.identity_id)
        bundle = rec.bundle
        for firing in proxy.evaluate_triggers():
            bundle = append_event(bundle, EventKind.CONDITION_TRIGGER, "proxy", payload=firing.payload(),
                                  logical_timestamp=t)
        if t % self.sc.anchor_period == 0:
            bundle = bundle.with_state(proxy.snapshot())
        if bundle is not rec.bundle:
            self.manager.update_bundle(live.identity_id, bundle)

    def act(self, t: int, action):
        def identity_of(name):
            return self.live[name].identity_id or name

        req = action.wire(identity_of)
        resp = json.loads(self.manager.handle_line(canonical_json(req)))
        self.actions.append({"tick": t, "request": req, "response": resp})

    def check(self, t: int):
        for live in self.live.values():
            if live.identity_id is None:
                continue
            res = verify_bundle(self.manager.record(live.identity_id).bundle)
            self.checks["provenance-chain"] += 1
            if not res:
                raise RunFailure("provenance-chain", t, f"{live.identity_id} broken at event {res.event_id}")
        for node in self.nodes:
            view = confirmation(node, self.sc.consensus)
            self.checks["nft-uniqueness"] += 1
            for iid, mints in node.ledger.mints.items():
                if sum(view.is_confirmed(m) for m in mints) > 1:
                    raise RunFailure("nft-uniqueness", t, f"{node.node_id} confirms two Mints of {iid}")

    # -------------------------------------------------------------------- run

    def run(self) -> dict:
        sc = self.sc
        lives = list(self.live.values())
        for t in range(1, sc.ticks + 1):
            self.manager.tick(t)
            for live in lives:
                if t in live.spec.observe:
                    self.observe(t, live)
            for live in lives:
                self.lifecycle(t, live)
            for live in lives:
                self.step_proxy(t, live)
            if t % sc.anchor_period == 0:
                for live in lives:
                    if live.identity_id is not None:
                        self.manager.anchor(live.identity_id, node_id=live.home)
            for action in sc.actions:
                if action.tick == t:
                    self.act(t, action)
            gossip_round(self.nodes)
            self.check(t)
        at_end = self._confirmed_digests()
        rounds = quiesce(self.nodes) if sc.ticks else 0
        return self._summary(at_end, rounds)

    def _confirmed_digests(self) -> dict:
        return {n.node_id: digest(sorted(confirmation(n, self.sc.consensus).all())) for n in self.nodes}

    def _summary(self, at_end: dict, quiesce_rounds: int) -> dict:
        sc, mgr = self.sc, self.manager
        serving = mgr.node()
        view = confirmation(serving, sc.consensus)
        confirmed = view.all()
        by_kind: dict[str, int] = {}
        for t in serving.ledger.order:
            kind = serving.ledger.transactions[t].kind
            if kind != TxKind.GENESIS:
                by_kind[kind.value] = by_kind.get(kind.value, 0) + 1
        nodes = {}
        final = self._confirmed_digests()
        for n in self.nodes:
            nodes[n.node_id] = {
                "transactions": len(n.ledger) - 1,
                "confirmed": len(confirmation(n, sc.consensus).all()) - 1,
                "confirmed_digest": final[n.node_id],
            }
        assets, proxies = {}, {}
        for live in self.live.values():
            iid = live.identity_id
            if iid is None:
                continue
            rec = mgr.record(iid)
            assets[iid] = {
                "asset": live.spec.name,
                "class": rec.identity.physical_hash.class_label,
                "owner": mgr.owner_of(iid),
                "home_node": live.home,
                "events": [
                    {"event_id": e.event_id, "kind": e.kind.value, "tick": e.logical_timestamp,
                     "actor": e.actor_id, "payload": e.payload}
                    for e in rec.bundle.provenance
                ],
                "bundle_head": rec.bundle.head_digest(),
                "sequence_digest": compose_sequence(rec.identity, rec.bundle, rec.proxy_locator).digest,
            }
            if live.proxy is not None:
                proxies[iid] = self._proxy_summary(live)
        return {
            "scenario": sc.name,
            "kind": "lifecycle",
            "seed": sc.seed,
            "ticks": sc.ticks,
            "resolutions": self.resolutions,
            "identities": {a: l.identity_id for a, l in self.live.items() if l.identity_id is not None},
            "assets": assets,
            "proxies": proxies,
            "ledger": {
                "nodes": nodes,
                "transactions": sum(by_kind.values()),
                "by_kind": by_kind,
                "confirmed_transfers": sum(
                    1 for t in confirmed if serving.ledger.transactions[t].kind == TxKind.OWNERSHIP_TRANSFER
                ),
                "confirmed_mints": sum(1 for t in confirmed if serving.ledger.transactions[t].kind == TxKind.MINT),
                "converged_at_end": len(set(at_end.values())) == 1,
                "quiesce_rounds": quiesce_rounds,
                "converged": len(set(final.values())) == 1,
            },
            "actions": self.actions,
            "audit": mgr.audit,
            "invariants": dict(self.checks),
        }

    def _proxy_summary(self, live: _Live) -> dict:
        proxy = live.proxy
        names = proxy.model.state_names
        rms = np.sqrt(live.sq_err / max(live.steps, 1))
        out = {
            "policy": {"period": proxy.policy.period,
                       "channels": [proxy.model.channels[c] for c in proxy.policy.active_channels]},
            "cost": _r(proxy.policy.cost),
            "samples": proxy.samples_taken,
            "rms_error": {n: _r(v) for n, v in zip(names, rms)},
            "estimate": {n: _r(v) for n, v in zip(names, proxy.state.x_hat)},
        }
        if proxy.qod is not None:
            cert = proxy.certify()
            out["qod"] = {n: _r(b) for n, b in zip(names, proxy.qod.bounds)}
            out["certified"] = bool(cert)
            if cert.steady_stddevs is not None:
                out["certified_stddev"] = {n: _r(v) for n, v in zip(names, cert.steady_stddevs)}
        return out


# --------------------------------------------------------------------------
# text rendering


def render_text(s: dict) -> str:
    if s.get("kind") == "attack-sweep":
        return _render_attack(s)
    lines = [f"scenario {s['scenario']}  seed {s['seed']}  ticks {s['ticks']}", ""]
    lines.append("resolutions")
    if not s["resolutions"]:
        lines.append("  (none)")
    for r in s["resolutions"]:
        if r["resolution"] == "LowConfidence":
            lines.append(f"  t={r['tick']:<4} {r['asset']:<12} LowConfidence")
            continue
        lines.append(f"  t={r['tick']:<4} {r['asset']:<12} {r['resolution']:<9} {r['identity_id']}  "
                     f"class={r['class']} p={r['confidence']} d={r['distance']}")
    lines += ["", "assets"]
    if not s["assets"]:
        lines.append("  (none)")
    for iid, a in sorted(s["assets"].items()):
        lines.append(f"  {iid} ({a['asset']}, {a['class']}) owner={a['owner']} sequence={a['sequence_digest'][:16]}")
        for e in a["events"]:
            lines.append(f"    #{e['event_id']} t={e['tick']} {e['kind']} by {e['actor']} {canonical_json(e['payload'])}")
    if s["proxies"]:
        lines += ["", "proxies"]
        for iid, p in sorted(s["proxies"].items()):
            pol = p["policy"]
            lines.append(f"  {iid} period={pol['period']} channels={','.join(pol['channels'])} cost={p['cost']} "
                         f"samples={p['samples']} certified={p.get('certified', 'n/a')}")
            for name in sorted(p["rms_error"]):
                bound = p.get("qod", {}).get(name, "-")
                sd = p.get("certified_stddev", {}).get(name, "-")
                lines.append(f"    {name:<16} rms={p['rms_error'][name]:<10} stddev={sd:<10} bound={bound}")
    led = s["ledger"]
    lines += ["", "ledger"]
    lines.append(f"  transactions={led['transactions']} confirmed_mints={led['confirmed_mints']} "
                 f"confirmed_transfers={led['confirmed_transfers']}")
    lines.append(f"  converged_at_end={led['converged_at_end']} converged={led['converged']} "
                 f"quiesce_rounds={led['quiesce_rounds']}")
    for nid, n in sorted(led["nodes"].items()):
        lines.append(f"  {nid:<6} txs={n['transactions']:<5} confirmed={n['confirmed']:<5} {n['confirmed_digest'][:16]}")
    lines += ["", "actions"]
    if not s["actions"]:
        lines.append("  (none)")
    for a in s["actions"]:
        req = {k: v for k, v in a["request"].items() if k != "verb"}
        resp = a["response"]
        outcome = resp["status"]
        if outcome == "ok" and isinstance(resp.get("payload"), dict) and "kind" in resp["payload"]:
            outcome += f" {resp['payload']['kind']}"
        elif outcome != "ok":
            outcome += f" {resp.get('reason') or resp.get('error')}"
        lines.append(f"  t={a['tick']:<4} {a['request']['verb']:<8} {canonical_json(req)} -> {outcome}")
    lines += ["", "invariants"]
    for k, v in sorted(s["invariants"].items()):
        lines.append(f"  {k}: {v} checks passed")
    return "\n".join(lines) + "\n"


def _render_attack(s: dict) -> str:
    a = s["attack"]
    lines = [
        f"scenario {s['scenario']}  seed {s['seed']}",
        f"honest_nodes={a['honest_nodes']} rounds={a['rounds']} runs={a['runs']} "
        f"threshold={a['confirmation_weight_threshold']} alpha={a['alpha']}",
        "",
        "fraction  successes  rate",
    ]
    for row in s["table"]:
        lines.append(f"{row['adversary_fraction']:<9} {row['successes']:>3}/{row['runs']:<6} {row['reversion_rate']:.3f}")
    lines += ["", f"monotone={s['monotone']}"]
    return "\n".join(lines) + "\n"
