"""Independent reference computations.

Nothing here imports the package's numerical code. Each oracle is the
most direct (often brute-force) way to compute the quantity, so agreement
with the implementation is meaningful.
"""
from __future__ import annotations

import math
from collections import deque
from fractions import Fraction

from scipy.stats import norm

LEVEL_WEIGHTS = {
    "Yes": Fraction(95, 100),
    "Usually": Fraction(8, 10),
    "Sometimes": Fraction(5, 10),
    "Rarely": Fraction(2, 10),
    "Doubtful": Fraction(1, 10),
    "No": Fraction(5, 100),
}


def brute_force_posterior(likelihoods: dict, answers: list) -> dict:
    """Exact rational posterior; ``likelihoods[label][qid]`` and ``[(qid, level)]``."""
    scores = {}
    for label, row in likelihoods.items():
        s = Fraction(1)
        for qid, level in answers:
            if level == "Unknown":
                continue
            w = LEVEL_WEIGHTS[level]
            lk = Fraction(row[qid]).limit_denominator(10**9)
            s *= w * lk + (1 - w) * (1 - lk)
        scores[label] = s
    total = sum(scores.values())
    return {k: v / total for k, v in scores.items()}


def scalar_periodic_stddev(period: int, q: float, r: float) -> float:
    """Worst per-tick stddev of a random walk observed every ``period`` ticks.

    Posterior variance at the sample tick solves P = (P + pQ) R / (P + pQ + R);
    between samples the variance grows by Q per tick, peaking p-1 ticks later.
    """
    p = period
    post = (-p * q + math.sqrt(p * p * q * q + 4 * p * q * r)) / 2
    return math.sqrt(post + (p - 1) * q)


def same_digest_probability(values, sigmas, factor: float) -> float:
    """P(every coordinate stays in its bin) under independent N(0, sigma) noise."""
    prob = 1.0
    for x, s in zip(values, sigmas):
        w = factor * s
        lo = math.floor(x / w) * w
        prob *= norm.cdf((lo + w - x) / s) - norm.cdf((lo - x) / s)
    return prob


def sigma_distance(a, b, sigmas) -> float:
    return math.sqrt(sum(((x - y) / s) ** 2 for x, y, s in zip(a, b, sigmas)))


def reachability_weights(parents: dict) -> dict:
    """Cumulative weight by BFS over approvers: 1 + #transactions reaching t."""
    approvers = {t: [] for t in parents}
    for t, ps in parents.items():
        for p in set(ps):
            if p in approvers:
                approvers[p].append(t)
    out = {}
    for t in parents:
        seen, queue = {t}, deque([t])
        while queue:
            for a in approvers[queue.popleft()]:
                if a not in seen:
                    seen.add(a)
                    queue.append(a)
        out[t] = len(seen)
    return out


def binomial_upper(k: int, n: int, z: float = 4.0) -> float:
    """Crude upper bound on a rate given k of n, for MC tolerance checks."""
    p = k / n
    return p + z * math.sqrt(max(p * (1 - p), 1.0 / n) / n)


# Hand-traced outcome of the bundled tenant-keys scenario. Two keys with the
# same cut pattern are minted on their first scans (ticks 1 and 2) and
# resolved on re-scans (ticks 21 and 22). The landlord grants at tick 15,
# tenants query at 16 (scope decides each answer), the back-door key is
# transferred to tenant-b at 20, and by tick 35 the transfer is confirmed:
# tenant-a's grant from the landlord is dead, tenant-b as owner gets a
# proxy handle, and the landlord's second transfer attempt at 36 fails.
TENANT_KEYS_RESOLUTIONS = [
    (1, "front-door", "cps-000001", "Minted"),
    (2, "back-door", "cps-000002", "Minted"),
    (21, "front-door", "cps-000001", "Resolved"),
    (22, "back-door", "cps-000002", "Resolved"),
]

TENANT_KEYS_EVENTS = {
    "cps-000001": [(1, "Acquisition", 1, "landlord"), (2, "Maintenance", 18, "landlord")],
    "cps-000002": [(1, "Acquisition", 2, "landlord"), (2, "CustodyTransfer", 20, "landlord")],
}

TENANT_KEYS_OWNERS = {"cps-000001": "landlord", "cps-000002": "tenant-b"}

TENANT_KEYS_ACTIONS = [
    (15, "GRANT", "ok"),
    (15, "GRANT", "ok"),
    (15, "GRANT", "ok"),
    (16, "QUERY", "ok:Sequence"),
    (16, "QUERY", "ok:ProxyHandle"),
    (16, "QUERY", "ok:Sequence"),
    (16, "QUERY", "denied:insufficient scope"),
    (16, "QUERY", "denied:no active grant"),
    (20, "TRANSFER", "ok"),
    (35, "QUERY", "denied:no active grant"),
    (35, "QUERY", "ok:ProxyHandle"),
    (35, "QUERY", "ok:Sequence"),
    (36, "TRANSFER", "error:AuthorizationError"),
]


def action_outcome(resp: dict) -> str:
    if resp["status"] == "ok":
        payload = resp.get("payload") or {}
        return f"ok:{payload['kind']}" if isinstance(payload, dict) and "kind" in payload else "ok"
    if resp["status"] == "denied":
        return f"denied:{resp['reason']}"
    return f"error:{resp['error']}"
