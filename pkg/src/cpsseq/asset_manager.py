"""Permissioned access to CPS sequences and proxies.

Ownership is read from the serving ledger node's confirmed view; the
manager keeps no ownership table of its own. Owners hold every scope
implicitly. Access matrix for other users:

    =============  =============================
    request        satisfied by scope
    =============  =============================
    Identity       IdentityRead or MetadataRead
    Metadata       MetadataRead
    ProxyStream    ProxyStream
    =============  =============================
"""
from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, replace

from .digests import canonical_json, digest
from .errors import AuthorizationError, CPSError, UnknownAssetError, ValidationError
from .ledger import ConsensusConfig, LedgerNode, TxKind, confirmation, submit
from .metadata import EventKind, MetadataBundle, append_event, compose_sequence, dump_bundle, verify_bundle


class Scope(str, enum.Enum):
    IDENTITY_READ = "IdentityRead"
    METADATA_READ = "MetadataRead"
    PROXY_STREAM = "ProxyStream"


class Request(str, enum.Enum):
    IDENTITY = "Identity"
    METADATA = "Metadata"
    PROXY_STREAM = "ProxyStream"


SATISFIED_BY = {
    Request.IDENTITY: frozenset({Scope.IDENTITY_READ, Scope.METADATA_READ}),
    Request.METADATA: frozenset({Scope.METADATA_READ}),
    Request.PROXY_STREAM: frozenset({Scope.PROXY_STREAM}),
}


def access_allowed(is_owner: bool, scope, request) -> bool:
    return is_owner or bool(SATISFIED_BY[Request(request)] & frozenset(Scope(s) for s in scope))


@dataclass(frozen=True)
class AccessGrant:
    owner_id: str
    user_id: str
    identity_id: str
    scope: frozenset
    granted_at: int
    revoked: bool = False


@dataclass(frozen=True)
class ProxyHandle:
    token: str
    identity_id: str
    user_id: str
    issued_at: int


@dataclass(frozen=True)
class QueryResult:
    kind: str  # "Sequence" | "ProxyHandle" | "Denied"
    identity: object = None
    bundle: MetadataBundle | None = None  # None for identity-only answers
    proxy_locator: str = ""
    sequence_digest: str = ""
    handle: ProxyHandle | None = None
    reason: str = ""

    @property
    def denied(self) -> bool:
        return self.kind == "Denied"


@dataclass
class AssetRecord:
    identity: object
    bundle: MetadataBundle
    proxy: object
    proxy_locator: str
    anchored_digest: str = ""


class HandleRevoked(CPSError):
    pass


class AssetManager:
    """One public manager over a set of ledger nodes."""

    def __init__(self, nodes, serving: str | None = None, config: ConsensusConfig | None = None):
        self.nodes = {n.node_id: n for n in nodes}
        if not self.nodes:
            raise ValidationError("asset manager needs at least one ledger node")
        self.serving = serving or sorted(self.nodes)[0]
        self.config = config or self.node().config
        self.records: dict[str, AssetRecord] = {}
        self.grants: dict[tuple, AccessGrant] = {}
        self.handles: dict[str, ProxyHandle] = {}
        self.clock = 0
        self.audit: list = []
        self._handle_counter = 0
        self._lock = threading.RLock()

    def node(self, node_id: str | None = None) -> LedgerNode:
        try:
            return self.nodes[node_id or self.serving]
        except KeyError:
            raise ValidationError(f"unknown ledger node {node_id!r}") from None

    def _log(self, **entry):
        self.audit.append({"tick": self.clock, **entry})

    # ---------------------------------------------------------------- registry

    def register(self, identity, bundle: MetadataBundle, proxy, proxy_locator: str, owner_id: str,
                 node_id: str | None = None):
        """Record an asset and submit its Mint; returns the transaction."""
        with self._lock:
            iid = identity.identity_id
            seq = compose_sequence(identity, bundle, proxy_locator)
            tx = submit(self.node(node_id), TxKind.MINT, iid, seq.digest, proxy_locator=proxy_locator,
                        owner_id=owner_id)
            self.records[iid] = AssetRecord(identity, bundle, proxy, proxy_locator, seq.digest)
            self._log(action="mint", identity=iid, owner=owner_id, tx=tx.tx_id)
            return tx

    def record(self, identity_id: str) -> AssetRecord:
        if identity_id in self.records:
            return self.records[identity_id]
        if self.node().ledger.mints.get(identity_id):
            raise UnknownAssetError(f"identity {identity_id!r} is on the ledger but not served here")
        raise UnknownAssetError(f"unknown identity {identity_id!r}")

    def update_bundle(self, identity_id: str, bundle: MetadataBundle):
        rec = self.record(identity_id)
        check = verify_bundle(bundle)
        if not check:
            raise ValidationError(f"bundle broken at event {check.event_id}")
        rec.bundle = bundle

    def anchor(self, identity_id: str, node_id: str | None = None):
        """Submit a MetadataUpdate if the sequence digest changed; returns tx or None."""
        rec = self.record(identity_id)
        seq = compose_sequence(rec.identity, rec.bundle, rec.proxy_locator)
        if seq.digest == rec.anchored_digest:
            return None
        tx = submit(self.node(node_id), TxKind.METADATA_UPDATE, identity_id, seq.digest)
        rec.anchored_digest = seq.digest
        return tx

    def owner_of(self, identity_id: str) -> str | None:
        res = confirmation(self.node(), self.config).owner(identity_id)
        return res[0] if res else None

    # ----------------------------------------------------------------- grants

    def _active(self, g: AccessGrant | None, owner: str | None) -> bool:
        return g is not None and not g.revoked and g.owner_id == owner

    def grant(self, owner_id: str, user_id: str, identity_id: str, scope) -> AccessGrant:
        with self._lock:
            self.record(identity_id)
            scope = frozenset(Scope(s) for s in scope)
            owner = self.owner_of(identity_id)
            if owner is None or owner != owner_id:
                self._log(action="grant", identity=identity_id, owner=owner_id, user=user_id, status="unauthorized")
                raise AuthorizationError(f"{owner_id!r} is not the confirmed owner of {identity_id!r}")
            g = AccessGrant(owner_id, user_id, identity_id, scope, self.clock)
            self.grants[(user_id, identity_id)] = g
            self._log(action="grant", identity=identity_id, owner=owner_id, user=user_id,
                      scope=sorted(s.value for s in scope), status="ok")
            return g

    def revoke(self, owner_id: str, user_id: str, identity_id: str) -> AccessGrant | None:
        with self._lock:
            self.record(identity_id)
            if self.owner_of(identity_id) != owner_id:
                raise AuthorizationError(f"{owner_id!r} is not the confirmed owner of {identity_id!r}")
            g = self.grants.get((user_id, identity_id))
            if g is not None:
                g = replace(g, revoked=True)
                self.grants[(user_id, identity_id)] = g
            self._log(action="revoke", identity=identity_id, owner=owner_id, user=user_id)
            return g

    def active_grant(self, user_id: str, identity_id: str) -> AccessGrant | None:
        g = self.grants.get((user_id, identity_id))
        return g if self._active(g, self.owner_of(identity_id)) else None

    # ----------------------------------------------------------------- queries

    def query(self, user_id: str, identity_id: str, request) -> QueryResult:
        request = Request(request)
        rec = self.record(identity_id)
        owner = self.owner_of(identity_id)
        g = self.grants.get((user_id, identity_id))
        scope = g.scope if self._active(g, owner) else frozenset()
        is_owner = owner is not None and user_id == owner
        if not access_allowed(is_owner, scope, request):
            reason = "insufficient scope" if scope else "no active grant"
            self._log(action="query", identity=identity_id, user=user_id, request=request.value,
                      result="Denied", reason=reason)
            return QueryResult("Denied", reason=reason)
        if request == Request.PROXY_STREAM:
            self._handle_counter += 1
            token = digest([user_id, identity_id, self.clock, self._handle_counter])[:32]
            h = ProxyHandle(token, identity_id, user_id, self.clock)
            self.handles[token] = h
            self._log(action="query", identity=identity_id, user=user_id, request=request.value, result="ProxyHandle")
            return QueryResult("ProxyHandle", handle=h)
        seq = compose_sequence(rec.identity, rec.bundle, rec.proxy_locator)
        self._log(action="query", identity=identity_id, user=user_id, request=request.value, result="Sequence")
        return QueryResult(
            "Sequence", identity=rec.identity,
            bundle=rec.bundle if request == Request.METADATA else None,
            proxy_locator=rec.proxy_locator, sequence_digest=seq.digest,
        )

    def read_proxy(self, handle: ProxyHandle) -> dict:
        """Current proxy estimate through a live handle (state only, no provenance)."""
        if self.handles.get(handle.token) != handle:
            raise HandleRevoked("proxy handle is no longer valid")
        return self.records[handle.identity_id].proxy.read()

    # ---------------------------------------------------------------- transfer

    def transfer(self, owner_id: str, new_owner_id: str, identity_id: str, node_id: str | None = None):
        """Submit an OwnershipTransfer and record a CustodyTransfer; returns (tx, bundle)."""
        with self._lock:
            rec = self.record(identity_id)
            node = self.node(node_id)
            held = confirmation(node, self.config).owner(identity_id)
            if held is None or held[0] != owner_id:
                self._log(action="transfer", identity=identity_id, owner=owner_id, to=new_owner_id,
                          status="unauthorized")
                raise AuthorizationError(f"{owner_id!r} is not the confirmed owner of {identity_id!r}")
            tx = submit(node, TxKind.OWNERSHIP_TRANSFER, identity_id,
                        compose_sequence(rec.identity, rec.bundle, rec.proxy_locator).digest,
                        owner_id=new_owner_id, actor_id=owner_id)
            rec.bundle = append_event(rec.bundle, EventKind.CUSTODY_TRANSFER, owner_id,
                                      payload={"from": owner_id, "to": new_owner_id, "tx_id": tx.tx_id},
                                      logical_timestamp=max(self.clock, _last_ts(rec.bundle)))
            self._log(action="transfer", identity=identity_id, owner=owner_id, to=new_owner_id,
                      status="submitted", tx=tx.tx_id)
            return tx, rec.bundle

    # -------------------------------------------------------------------- time

    def tick(self, t: int | None = None):
        """Advance to a tick boundary: revoke stale grants, drop dead handles."""
        with self._lock:
            self.clock = self.clock + 1 if t is None else t
            owners = {iid: self.owner_of(iid) for iid in self.records}
            for key, g in list(self.grants.items()):
                if not g.revoked and owners.get(g.identity_id) not in (None, g.owner_id):
                    self.grants[key] = replace(g, revoked=True)
                    self._log(action="grant-revoked", identity=g.identity_id, owner=g.owner_id, user=g.user_id,
                              reason="ownership changed")
            for token, h in list(self.handles.items()):
                owner = owners.get(h.identity_id)
                g = self.grants.get((h.user_id, h.identity_id))
                if h.user_id == owner:
                    continue
                if not (self._active(g, owner) and Scope.PROXY_STREAM in g.scope):
                    del self.handles[token]

    # ------------------------------------------------------------ wire protocol

    def handle_line(self, line: str) -> str:
        """One request line in, one response line out.

        Requests: ``{"verb": "GRANT"|"REVOKE"|"QUERY"|"TRANSFER", ...}``.
        Responses: ``{"status": "ok"|"denied"|"error", "payload": ..., "error": ...}``.
        """
        try:
            req = json.loads(line)
            verb = req["verb"]
            if verb == "GRANT":
                g = self.grant(req["owner"], req["user"], req["identity"], req["scope"])
                payload = {"user": g.user_id, "identity": g.identity_id,
                           "scope": sorted(s.value for s in g.scope), "granted_at": g.granted_at}
            elif verb == "REVOKE":
                g = self.revoke(req["owner"], req["user"], req["identity"])
                payload = {"revoked": g is not None}
            elif verb == "QUERY":
                res = self.query(req["user"], req["identity"], req["request"])
                if res.denied:
                    return canonical_json({"status": "denied", "reason": res.reason}) + "\n"
                payload = _result_payload(res)
            elif verb == "TRANSFER":
                tx, _ = self.transfer(req["owner"], req["new_owner"], req["identity"], req.get("node"))
                payload = {"tx_id": tx.tx_id}
            else:
                raise ValidationError(f"unknown verb {verb!r}")
        except json.JSONDecodeError as exc:
            return canonical_json({"status": "error", "error": "ValidationError", "message": str(exc)}) + "\n"
        except KeyError as exc:
            return canonical_json({"status": "error", "error": "ValidationError",
                                   "message": f"missing field {exc.args[0]!r}"}) + "\n"
        except (CPSError, ValueError) as exc:
            return canonical_json({"status": "error", "error": type(exc).__name__, "message": str(exc)}) + "\n"
        return canonical_json({"status": "ok", "payload": payload}) + "\n"


def _last_ts(bundle: MetadataBundle) -> int:
    return bundle.provenance[-1].logical_timestamp if bundle.provenance else 0


def _result_payload(res: QueryResult) -> dict:
    if res.kind == "ProxyHandle":
        return {"kind": "ProxyHandle", "handle": res.handle.token}
    return {
        "kind": "Sequence",
        "identity": res.identity.to_json(),
        "proxy_locator": res.proxy_locator,
        "sequence_digest": res.sequence_digest,
        "bundle": dump_bundle(res.bundle).splitlines() if res.bundle is not None else None,
    }
