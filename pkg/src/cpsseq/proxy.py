"""Data proxies: sparse-sample linear-Gaussian state mirrors.

A proxy runs the discrete-time predict/update recursion on a
:class:`StateSpaceModel`, sampling only every ``period`` ticks on a subset of
observation channels. :func:`certify_policy` computes the steady-state
estimate-error standard deviations a sampling policy achieves, and
:func:`adapt_model` greedily leans the policy while it still meets the
quality-of-data bound.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_discrete_are

from .errors import ConfigurationError, ValidationError

CONVERGENCE_TOL = 1e-13
MAX_CYCLES = 10_000
MAX_PERIOD = 4096
_DIVERGED = 1e12


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    state_names: tuple
    state_units: tuple = ()
    channels: tuple = ()
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None

    def __post_init__(self):
        A, C, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.C, self.Q, self.R))
        n, m = A.shape[0], C.shape[0]
        if A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {A.shape}")
        if C.shape != (m, n):
            raise ConfigurationError(f"C must be m x {n}, got {C.shape}")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ConfigurationError("Q must be n x n and R m x m")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ConfigurationError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ConfigurationError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigurationError("R must be positive definite")
        names = tuple(self.state_names)
        if len(names) != n:
            raise ConfigurationError(f"{n} state names required")
        units = tuple(self.state_units) or ("1",) * n
        channels = tuple(self.channels) or tuple(f"y{i}" for i in range(m))
        if len(units) != n or len(channels) != m:
            raise ConfigurationError("state_units / channels length mismatch")
        x0 = np.zeros(n) if self.prior_mean is None else np.asarray(self.prior_mean, dtype=float).reshape(n)
        P0 = np.eye(n) if self.prior_cov is None else np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        if P0.shape != (n, n) or np.linalg.eigvalsh(_sym(P0)).min() < -1e-12:
            raise ConfigurationError("prior_cov must be n x n positive semi-definite")
        for k, v in (("A", A), ("C", C), ("Q", Q), ("R", R), ("state_names", names), ("state_units", units),
                     ("channels", channels), ("prior_mean", x0), ("prior_cov", P0)):
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, k, v)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_channels(self) -> int:
        return self.C.shape[0]

    def observability_rank(self, channels: Sequence[int] | None = None, period: int = 1) -> int:
        A = np.linalg.matrix_power(self.A, period)
        C = self.C if channels is None else self.C[list(channels)]
        blocks, M = [], C
        for _ in range(self.n_states):
            blocks.append(M)
            M = M @ A
        return int(np.linalg.matrix_rank(np.vstack(blocks)))

    def is_observable(self) -> bool:
        return self.observability_rank() == self.n_states

    def state_index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown state variable {name!r}") from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSpaceModel":
        states = d["states"]
        return cls(
            A=d["A"], C=d["C"], Q=d["Q"], R=d["R"],
            state_names=tuple(s["name"] if isinstance(s, Mapping) else s for s in states),
            state_units=tuple(s.get("unit", "1") if isinstance(s, Mapping) else "1" for s in states),
            channels=tuple(d.get("channels", ())),
            prior_mean=d.get("prior_mean"),
            prior_cov=d.get("prior_cov"),
        )

    def to_dict(self) -> dict:
        return {
            "states": [{"name": n, "unit": u} for n, u in zip(self.state_names, self.state_units)],
            "A": self.A.tolist(), "C": self.C.tolist(), "Q": self.Q.tolist(), "R": self.R.tolist(),
            "channels": list(self.channels),
            "prior_mean": self.prior_mean.tolist(), "prior_cov": self.prior_cov.tolist(),
        }


@dataclass(frozen=True)
class SamplingPolicy:
    period: int = 1
    active_channels: tuple = ()

    def __post_init__(self):
        if not isinstance(self.period, (int, np.integer)) or self.period < 1:
            raise ValidationError(f"period must be an integer >= 1, got {self.period!r}")
        chans = tuple(sorted(set(int(c) for c in self.active_channels)))
        if not chans:
            raise ValidationError("active_channels must be non-empty")
        object.__setattr__(self, "period", int(self.period))
        object.__setattr__(self, "active_channels", chans)

    @classmethod
    def full_rate(cls, model: StateSpaceModel) -> "SamplingPolicy":
        return cls(1, tuple(range(model.n_channels)))

    @property
    def cost(self) -> float:
        """Channel samples per tick."""
        return len(self.active_channels) / self.period

    def samples_at(self, tick: int) -> bool:
        return tick % self.period == 0


@dataclass(frozen=True)
class QualityOfData:
    bounds: tuple  # max steady stddev per state, model order

    def __post_init__(self):
        b = tuple(float(x) for x in self.bounds)
        if not b or any(not x > 0 for x in b):
            raise ValidationError("quality-of-data bounds must be positive")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def from_mapping(cls, model: StateSpaceModel, bounds: Mapping[str, float]) -> "QualityOfData":
        missing = [n for n in model.state_names if n not in bounds]
        if missing:
            raise ConfigurationError(f"quality-of-data bound missing for {missing}")
        extra = set(bounds) - set(model.state_names)
        if extra:
            raise ConfigurationError(f"quality-of-data bound for unknown states {sorted(extra)}")
        return cls(tuple(bounds[n] for n in model.state_names))


@dataclass(frozen=True)
class Certification:
    certified: bool
    steady_stddevs: np.ndarray | None = None
    violated: str | None = None
    reason: str = ""

    def __bool__(self):
        return self.certified


# --------------------------------------------------------------------------
# estimator primitives


def predict(x, P, A, Q):
    return A @ x, _sym(A @ P @ A.T + Q)


def update(x, P, z, C, R):
    """Minimum-variance linear update (Joseph form)."""
    S = C @ P @ C.T + R
    K = np.linalg.solve(S, C @ P).T
    I_KC = np.eye(len(x)) - K @ C
    x_new = x + K @ (z - C @ x)
    P_new = I_KC @ P @ I_KC.T + K @ R @ K.T
    return x_new, _sym(P_new)


def _restrict(model: StateSpaceModel, channels):
    idx = list(channels)
    return model.C[idx], model.R[np.ix_(idx, idx)]


def _undetectable(model: StateSpaceModel, policy: SamplingPolicy) -> bool:
    """PBH test on the per-cycle system for non-decaying unobservable modes."""
    Ap = np.linalg.matrix_power(model.A, policy.period)
    C, _ = _restrict(model, policy.active_channels)
    n = model.n_states
    for lam in np.linalg.eigvals(Ap):
        if abs(lam) >= 1 - 1e-12:
            pbh = np.vstack([lam * np.eye(n) - Ap, C.astype(complex)])
            if np.linalg.matrix_rank(pbh, tol=1e-9) < n:
                return True
    return False


def _lift(A, Q, period):
    """One cycle as a single step: (A^p, sum_j A^j Q A^j')."""
    Ap, Qp = np.eye(len(A)), np.zeros_like(Q)
    for _ in range(period):
        Qp = _sym(A @ Qp @ A.T + Q)
        Ap = A @ Ap
    return Ap, Qp


def _cycle_prior(model, Ap, Qp, C, R, tol, max_cycles):
    """Steady prior covariance at the sampling tick.

    Solves the lifted discrete algebraic Riccati equation; if the solver
    refuses (e.g. a singular lifted noise with marginal modes) falls back to
    iterating the cycle map until the relative change drops below ``tol``.
    """
    try:
        prior = solve_discrete_are(Ap.T, C.T, Qp, R)
        if np.all(np.isfinite(prior)):
            return _sym(prior), ""
    except (np.linalg.LinAlgError, ValueError):
        pass
    x = np.zeros(model.n_states)
    P = model.prior_cov.copy()
    for _ in range(max_cycles):
        _, post = update(x, P, np.zeros(len(C)), C, R)
        nxt = _sym(Ap @ post @ Ap.T + Qp)
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > _DIVERGED:
            return None, "divergence: covariance grew without bound"
        if np.abs(nxt - P).max() <= tol * max(np.abs(nxt).max(), 1e-300):
            return nxt, ""
        P = nxt
    return None, f"no convergence within {max_cycles} cycles"


def steady_stddevs(model: StateSpaceModel, policy: SamplingPolicy, tol=CONVERGENCE_TOL, max_cycles=MAX_CYCLES):
    """Per-state worst-case steady-state estimate stddev under periodic sampling.

    One cycle is an update on the active channels followed by ``period``
    predictions. The reported covariance at the sampling tick is the
    posterior; on the ``period - 1`` ticks in between it is the prediction.
    Returns ``(stddevs, reason)`` with ``stddevs`` None on failure.
    """
    if _undetectable(model, policy):
        return None, "divergence: unobservable non-decaying mode under the restricted channels"
    C, R = _restrict(model, policy.active_channels)
    A, Q = model.A, model.Q
    Ap, Qp = _lift(A, Q, policy.period)
    prior, reason = _cycle_prior(model, Ap, Qp, C, R, tol, max_cycles)
    if prior is None:
        return None, reason
    _, P = update(np.zeros(model.n_states), prior, np.zeros(len(C)), C, R)
    worst = np.diag(P).copy()
    for _ in range(policy.period - 1):
        P = _sym(A @ P @ A.T + Q)
        worst = np.maximum(worst, np.diag(P))
    if np.abs(P).max() > _DIVERGED:
        return None, "divergence: covariance grew without bound"
    return np.sqrt(np.maximum(worst, 0.0)), ""


def certify_policy(model: StateSpaceModel, policy: SamplingPolicy, qod: QualityOfData) -> Certification:
    if len(qod.bounds) != model.n_states:
        raise ConfigurationError("quality-of-data bounds do not match the model states")
    if max(policy.active_channels) >= model.n_channels:
        raise ValidationError("policy references channels outside the model")
    std, reason = steady_stddevs(model, policy)
    if std is None:
        return Certification(False, None, None, reason)
    for name, s, b in zip(model.state_names, std, qod.bounds):
        if s > b:
            return Certification(False, std, name, f"{name}: steady stddev {s:.6g} exceeds bound {b:.6g}")
    return Certification(True, std, None, "")


# --------------------------------------------------------------------------
# the proxy


@dataclass(frozen=True)
class ProxyState:
    x_hat: np.ndarray
    P: np.ndarray
    last_update: int = 0


@dataclass(frozen=True)
class Trigger:
    variable: str
    threshold: float
    direction: str = "rising"

    def __post_init__(self):
        if self.direction not in ("rising", "falling"):
            raise ConfigurationError(f"trigger direction must be rising or falling, got {self.direction!r}")


@dataclass(frozen=True)
class TriggerFiring:
    """A crossed trigger; becomes a ConditionTrigger provenance event."""

    variable: str
    threshold: float
    direction: str
    value: float
    tick: int

    def payload(self) -> dict:
        return {
            "variable": self.variable,
            "threshold": self.threshold,
            "direction": self.direction,
            "value": self.value,
            "tick": self.tick,
        }


class DataProxy:
    """Mutable single-writer mirror of one asset's state."""

    def __init__(self, model: StateSpaceModel, policy: SamplingPolicy | None = None,
                 qod: QualityOfData | None = None, triggers: Sequence[Trigger] = (),
                 class_label: str | None = None, locator: str = ""):
        self.model = model
        self.policy = policy or SamplingPolicy.full_rate(model)
        self.qod = qod
        self.triggers = list(triggers)
        self.class_label = class_label
        self.locator = locator
        self.state = ProxyState(model.prior_mean.copy(), model.prior_cov.copy(), 0)
        self._last_seen = {id(t): self._value(t) for t in self.triggers}
        self.samples_taken = 0

    def _value(self, trig: Trigger) -> float:
        return float(self.state.x_hat[self.model.state_index(trig.variable)])

    def add_trigger(self, trig: Trigger):
        self.model.state_index(trig.variable)
        self.triggers.append(trig)
        self._last_seen[id(trig)] = self._value(trig)

    def specialize(self, values: Mapping[str, tuple]) -> "DataProxy":
        """Replace the generalized prior for named states with ``(value, sigma)``.

        Used to start an instance's proxy from its characterized features;
        names that are not model states are ignored.
        """
        x, P = self.state.x_hat.copy(), self.state.P.copy()
        for name, (value, sigma) in values.items():
            if name in self.model.state_names:
                i = self.model.state_index(name)
                x[i] = float(value)
                P[i, :] = 0.0
                P[:, i] = 0.0
                P[i, i] = float(sigma) ** 2
        self.state = ProxyState(x, P, self.state.last_update)
        self._last_seen = {id(t): self._value(t) for t in self.triggers}
        return self

    def step(self, measurement=None, tick: int | None = None) -> "DataProxy":
        """Advance one tick; ``measurement`` covers the active channels only."""
        z = None
        if measurement is not None:
            z = np.atleast_1d(np.asarray(measurement, dtype=float))
            if z.shape != (len(self.policy.active_channels),):
                raise ValidationError(
                    f"measurement has shape {z.shape}, expected ({len(self.policy.active_channels)},)"
                )
            if not np.all(np.isfinite(z)):
                raise ValidationError("measurement contains non-finite values")
        x, P = predict(self.state.x_hat, self.state.P, self.model.A, self.model.Q)
        if z is not None:
            C, R = _restrict(self.model, self.policy.active_channels)
            x, P = update(x, P, z, C, R)
            self.samples_taken += len(z)
        t = self.state.last_update + 1 if tick is None else tick
        self.state = ProxyState(x, P, t)
        return self

    def certify(self) -> Certification:
        if self.qod is None:
            raise ConfigurationError("proxy has no quality-of-data bound")
        return certify_policy(self.model, self.policy, self.qod)

    def adapt(self) -> "DataProxy":
        self.policy = adapt_policy(self.model, self.policy, self.qod)
        return self

    def evaluate_triggers(self) -> list:
        fired = []
        for trig in self.triggers:
            prev, cur = self._last_seen[id(trig)], self._value(trig)
            if trig.direction == "rising":
                crossed = prev < trig.threshold <= cur
            else:
                crossed = prev > trig.threshold >= cur
            if crossed:
                fired.append(TriggerFiring(trig.variable, trig.threshold, trig.direction, cur, self.state.last_update))
            self._last_seen[id(trig)] = cur
        return fired

    def read(self) -> dict:
        """Current estimate keyed by state name, with per-state stddev."""
        sd = np.sqrt(np.maximum(np.diag(self.state.P), 0.0))
        return {
            "tick": self.state.last_update,
            "state": {n: float(v) for n, v in zip(self.model.state_names, self.state.x_hat)},
            "stddev": {n: float(v) for n, v in zip(self.model.state_names, sd)},
        }

    def snapshot(self):
        from .metadata import StateSnapshot, SnapshotSource

        return StateSnapshot(
            {n: (float(v), u) for n, v, u in zip(self.model.state_names, self.state.x_hat, self.model.state_units)},
            self.state.last_update,
            SnapshotSource.PROXY_ESTIMATE,
        )


def adapt_policy(model: StateSpaceModel, policy: SamplingPolicy, qod: QualityOfData | None,
                 max_period: int = MAX_PERIOD) -> SamplingPolicy:
    """Greedy lean-down: double the period, then drop channels in model order."""
    if qod is None:
        raise ConfigurationError("adaptation needs a quality-of-data bound")
    if not certify_policy(model, policy, qod):
        return policy
    current = policy
    while True:
        changed = False
        while current.period * 2 <= max_period:
            cand = replace(current, period=current.period * 2)
            if not certify_policy(model, cand, qod):
                break
            current, changed = cand, True
        for ch in current.active_channels:
            if len(current.active_channels) == 1:
                break
            cand = SamplingPolicy(current.period, tuple(c for c in current.active_channels if c != ch))
            if certify_policy(model, cand, qod):
                current, changed = cand, True
        if not changed:
            return current


# --------------------------------------------------------------------------
# module-level operations


class ModelRegistry:
    """Generalized models keyed by class label."""

    def __init__(self, models: Mapping[str, StateSpaceModel] | None = None):
        self._models = {}
        for label, m in (models or {}).items():
            self.register(label, m)

    def register(self, class_label: str, model: StateSpaceModel):
        if not model.is_observable():
            raise ConfigurationError(f"generalized model for {class_label!r} is not observable")
        self._models[class_label] = model

    def __contains__(self, label):
        return label in self._models

    def __getitem__(self, label) -> StateSpaceModel:
        try:
            return self._models[label]
        except KeyError:
            raise ConfigurationError(f"no generalized model registered for class {label!r}") from None

    def labels(self):
        return sorted(self._models)


def instantiate_proxy(class_label: str, models: ModelRegistry | None = None, **kwargs) -> DataProxy:
    if models is None:
        from .config import load_config

        models = load_config().models
    return DataProxy(models[class_label], class_label=class_label, **kwargs)


def step_estimate(proxy: DataProxy, measurement=None) -> DataProxy:
    return proxy.step(measurement)


def adapt_model(proxy: DataProxy) -> DataProxy:
    return proxy.adapt()


def evaluate_triggers(proxy: DataProxy) -> list:
    return proxy.evaluate_triggers()


def psd_sqrt(M):
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.maximum(w, 0.0))


def simulate(model: StateSpaceModel, n_steps: int, rng: np.random.Generator, x0=None):
    """True state trajectory and full-channel measurements, ``n_steps`` long."""
    n, m = model.n_states, model.n_channels
    x = model.prior_mean.copy() if x0 is None else np.asarray(x0, dtype=float)
    Lq, Lr = psd_sqrt(model.Q), psd_sqrt(model.R)
    xs, zs = np.empty((n_steps, n)), np.empty((n_steps, m))
    for k in range(n_steps):
        x = model.A @ x + Lq @ rng.standard_normal(n)
        xs[k] = x
        zs[k] = model.C @ x + Lr @ rng.standard_normal(m)
    return xs, zs
