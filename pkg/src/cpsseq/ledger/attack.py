"""Parasite double-mint attack against a confirmed Mint.

Honest nodes issue one transaction per round in aggregate; the adversary
issues Poisson(f / (1 - f)) transactions per round, so ``f`` is its share of
total issuance. At the fork round the adversary privately mints the target
identity a second time and grows a chain approving only its own Mint. It
publishes the chain the first round in which the honest Mint is confirmed
and the parasite Mint is heavier, which makes honest nodes drop the
confirmed Mint.

Honest nodes form a synchronous full mesh, so their views coincide at every
round boundary and a single replica stands in for all of them. Adversary
issuance is drawn by inverting the Poisson CDF on a per-seed uniform
stream, so for a fixed seed a larger fraction never issues fewer
transactions in any round.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from ..digests import digest
from ..errors import ValidationError
from .node import ConfirmationView, ConsensusConfig, LedgerNode, hash_seed, select_tips, submit
from .transaction import Transaction, TxKind

TARGET = "target-asset"
BACKGROUND = "background-asset"


@dataclass(frozen=True)
class AttackReport:
    seed: int
    adversary_fraction: float
    rounds: int
    honest_count: int
    confirmation_threshold: int
    alpha: float
    reverted_confirmations: int
    success: bool
    target_confirmed_round: int | None
    release_round: int | None
    honest_txs: int
    adversary_txs: int

    def to_json(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def run_attack(honest_count: int = 10, adversary_fraction: float = 0.0, rounds: int = 5000, seed: int = 0,
               config: ConsensusConfig | None = None, fork_round: int = 10) -> AttackReport:
    if not 0.0 <= adversary_fraction < 1.0:
        raise ValidationError("adversary_fraction must lie in [0, 1)")
    if honest_count < 1 or rounds < 1:
        raise ValidationError("honest_count and rounds must be positive")
    cfg = config or ConsensusConfig()
    thr = cfg.confirmation_weight_threshold
    fork_round = min(fork_round, rounds - 1)

    honest = LedgerNode("honest", rng_seed=hash_seed(seed, "honest"), config=cfg)
    issuers = [f"h{i}" for i in range(honest_count)]
    adv_rng = np.random.default_rng(hash_seed(seed, "adversary"))
    lam = adversary_fraction / (1.0 - adversary_fraction)
    uniforms = adv_rng.random(rounds)
    per_round = stats.poisson.ppf(uniforms, lam).astype(np.int64) if lam > 0 else np.zeros(rounds, np.int64)

    def honest_issue(r, kind, identity, owner=""):
        honest.node_id = issuers[honest.rng.randrange(honest_count)]
        return submit(honest, kind, identity, digest([identity, r]), owner_id=owner,
                      proxy_locator=f"proxy://{identity}" if kind == TxKind.MINT else "")

    honest_issue(0, TxKind.MINT, BACKGROUND, owner="bg-owner")
    target = rival = None
    parasite_count = 0
    confirmed_round = release_round = None
    ever_confirmed: set = set()
    reverted = 0
    honest_txs = 1

    def check_reversions():
        # only contested Mints can leave the confirmed set; weights never decrease
        nonlocal reverted, confirmed_round
        view = ConfirmationView(honest.ledger, thr)
        now = {t for t in honest.ledger.mints.get(TARGET, ()) if view.is_confirmed(t)}
        if confirmed_round is None and target.tx_id in now:
            confirmed_round = r
        reverted += len(ever_confirmed - now)
        ever_confirmed.update(now)

    for r in range(1, rounds):
        if r == fork_round:
            rival = _rival_mint(honest, seed, r)
            target = honest_issue(r, TxKind.MINT, TARGET, owner="alice")
        else:
            honest_issue(r, TxKind.METADATA_UPDATE, BACKGROUND)
        honest_txs += 1
        if rival is None:
            continue
        check_reversions()
        if reverted:
            break
        parasite_count += int(per_round[r])
        w_target = honest.ledger.weight(target.tx_id)
        w_rival = 1 + parasite_count
        heavier = w_rival > w_target or (w_rival == w_target and rival.tx_id < target.tx_id)
        if release_round is None and w_target >= thr and heavier:
            release_round = r
            for tx in _parasite_chain(rival, parasite_count):
                honest.ledger.add(tx)
            check_reversions()
            if reverted:
                break

    return AttackReport(
        seed=seed, adversary_fraction=adversary_fraction, rounds=rounds, honest_count=honest_count,
        confirmation_threshold=thr, alpha=cfg.alpha, reverted_confirmations=reverted, success=reverted > 0,
        target_confirmed_round=confirmed_round, release_round=release_round,
        honest_txs=honest_txs, adversary_txs=(1 + parasite_count) if rival is not None else 0,
    )


def _rival_mint(honest: LedgerNode, seed: int, r: int) -> Transaction:
    """The adversary's Mint, attached to tips of the honest view before the target exists."""
    adv = LedgerNode("adversary", honest=False, rng_seed=hash_seed(seed, "adversary-tips"), config=honest.config)
    adv.ledger = honest.ledger  # read-only use: tip selection only
    parents = select_tips(adv)
    return Transaction(TxKind.MINT, TARGET, digest([TARGET, "rival", r]), parents, "adversary", r,
                       proxy_locator=f"proxy://{TARGET}", owner_id="mallory", actor_id="mallory").sealed()


def _parasite_chain(rival: Transaction, count: int):
    yield rival
    prev = rival.tx_id
    for i in range(count):
        tx = Transaction(TxKind.METADATA_UPDATE, TARGET, digest([TARGET, "parasite", i]), (prev, rival.tx_id),
                         "adversary", rival.logical_timestamp + i + 1, actor_id="mallory").sealed()
        yield tx
        prev = tx.tx_id


def attack_sweep(fractions, seeds, honest_count: int = 10, rounds: int = 5000,
                 config: ConsensusConfig | None = None, fork_round: int = 10) -> list:
    """Reversion counts per fraction; one row per fraction."""
    rows = []
    for f in fractions:
        reports = [run_attack(honest_count, f, rounds, s, config, fork_round) for s in seeds]
        successes = sum(r.success for r in reports)
        rows.append({
            "adversary_fraction": f,
            "runs": len(reports),
            "successes": successes,
            "reversion_rate": successes / len(reports),
            "reverted_confirmations": sum(r.reverted_confirmations for r in reports),
        })
    return rows
