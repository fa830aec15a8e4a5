"""Finite constrained MDPs, softmax policies, non-robust evaluation and visitation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import InitVar, dataclass, field
from typing import Union

import numpy as np

from ._validation import (
    ValidationError,
    check_discount,
    check_probability_rows,
    check_shape,
    check_unit_interval,
)

DENSE_VISITATION_LIMIT = 4096
TAIL_TOL = 1e-10


def _frozen(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularCMDP:
    """A finite constrained MDP ``(S, A, P, r, c_1..c_m, gamma, rho, b_1..b_m)``.

    ``kernel[s, a, s']`` is the centroid transition probability. Rewards and
    utilities are ``(S, A)`` arrays in ``[0, 1]``. ``meta`` carries free-form
    provenance such as the generator name and reward rescaling constants.
    """

    kernel: np.ndarray
    reward: np.ndarray
    utilities: tuple
    gamma: float
    rho: np.ndarray
    thresholds: tuple
    meta: dict = field(default_factory=dict)
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValidationError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        n_s, n_a = kernel.shape[:2]
        utilities = tuple(np.asarray(c, dtype=float) for c in self.utilities)
        thresholds = tuple(float(b) for b in self.thresholds)
        if validate:
            check_probability_rows(kernel, "kernel")
            check_shape(self.reward, (n_s, n_a), "reward")
            check_unit_interval(self.reward, "reward")
            if len(utilities) < 1:
                raise ValidationError("at least one utility function is required")
            if len(thresholds) != len(utilities):
                raise ValidationError("need exactly one threshold per utility")
            for i, c in enumerate(utilities):
                check_shape(c, (n_s, n_a), f"utilities[{i}]")
                check_unit_interval(c, f"utilities[{i}]")
            check_discount(self.gamma)
            check_shape(self.rho, (n_s,), "rho")
            check_probability_rows(self.rho, "rho")
        object.__setattr__(self, "kernel", _frozen(kernel))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "utilities", tuple(_frozen(c) for c in utilities))
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_states(self):
        return self.kernel.shape[0]

    @property
    def n_actions(self):
        return self.kernel.shape[1]

    @property
    def utility(self):
        return self.utilities[0]

    @property
    def threshold(self):
        return self.thresholds[0]

    def signal(self, which="reward"):
        """Return the ``(S, A)`` signal named by ``which``.

        ``"reward"`` selects ``r``; ``"utility"`` or an integer ``i`` selects ``c_i``.
        """
        if isinstance(which, str):
            if which == "reward":
                return self.reward
            if which == "utility":
                return self.utilities[0]
            raise ValueError(f"unknown signal {which!r}")
        return self.utilities[int(which)]

    def with_threshold(self, b, index=0):
        thresholds = list(self.thresholds)
        thresholds[index] = float(b)
        return TabularCMDP(self.kernel, self.reward, self.utilities, self.gamma,
                           self.rho, tuple(thresholds), meta=self.meta)

    def to_dict(self):
        out = {
            "n_states": int(self.n_states),
            "n_actions": int(self.n_actions),
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
            "utilities": [c.tolist() for c in self.utilities],
            "gamma": self.gamma,
            "rho": self.rho.tolist(),
            "thresholds": list(self.thresholds),
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, doc, validate=True):
        missing = [k for k in ("n_states", "n_actions", "kernel", "reward", "utilities",
                               "gamma", "rho", "thresholds") if k not in doc]
        if missing:
            raise ValidationError(f"MDP document is missing field(s): {', '.join(missing)}")
        mdp = cls(
            kernel=np.asarray(doc["kernel"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            utilities=tuple(np.asarray(c, dtype=float) for c in doc["utilities"]),
            gamma=doc["gamma"],
            rho=np.asarray(doc["rho"], dtype=float),
            thresholds=tuple(doc["thresholds"]),
            meta=doc.get("meta", {}),
            validate=validate,
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValidationError(
                f"declared size ({doc['n_states']}, {doc['n_actions']}) does not match "
                f"kernel shape ({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp

    def to_json(self, indent=None):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text, validate=True):
        return cls.from_dict(json.loads(text), validate=validate)

    def digest(self):
        """SHA-256 of the canonical JSON serialization."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def save_mdp(mdp, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mdp.to_json())


def load_mdp(path, validate=True):
    with open(path, encoding="utf-8") as fh:
        return TabularCMDP.from_json(fh.read(), validate=validate)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy with unconstrained logits ``theta[s, a]``."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValidationError(f"theta must be 2-D, got shape {theta.shape}")
        object.__setattr__(self, "theta", _frozen(theta))

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)))

    @property
    def shape(self):
        return self.theta.shape

    def probs(self):
        return policy_probs(self)


Policy = Union[SoftmaxPolicy, np.ndarray]


def policy_probs(policy):
    """Row-wise softmax of the logits, stabilised by subtracting the row max."""
    theta = policy.theta if isinstance(policy, SoftmaxPolicy) else np.asarray(policy, dtype=float)
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def as_probs(policy, shape=None):
    """Accept a :class:`SoftmaxPolicy` or an explicit ``(S, A)`` probability table."""
    if isinstance(policy, SoftmaxPolicy):
        probs = policy_probs(policy)
    else:
        probs = check_probability_rows(policy, "policy", atol=1e-9)
    if shape is not None and probs.shape != tuple(shape):
        raise ValidationError(f"policy has shape {probs.shape}, expected {tuple(shape)}")
    return probs


def induced_chain(kernel, probs):
    """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']``."""
    return np.einsum("sa,sat->st", probs, kernel)


def _signal_array(mdp, signal):
    if isinstance(signal, np.ndarray):
        return check_shape(signal, (mdp.n_states, mdp.n_actions), "signal")
    return mdp.signal(signal)


def evaluate(mdp, kernel, policy, signal="reward"):
    """Non-robust value ``V = (I - gamma P_pi)^-1 r_pi`` under ``kernel``."""
    kernel = check_probability_rows(kernel, "kernel")
    check_shape(kernel, mdp.kernel.shape, "kernel")
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    sig = _signal_array(mdp, signal)
    p_pi = induced_chain(kernel, probs)
    r_pi = (probs * sig).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


@dataclass(frozen=True, eq=False)
class Visitation:
    """Normalised discounted state-action occupancy ``d[s, a]``."""

    d: np.ndarray

    @property
    def state(self):
        return self.d.sum(axis=1)

    def flow_residual(self, kernel, gamma, start):
        """Sup-norm residual of the flow equation under ``kernel``."""
        inflow = gamma * np.einsum("sat,sa->t", kernel, self.d) + (1.0 - gamma) * np.asarray(start)
        return float(np.max(np.abs(inflow - self.state)))


def state_visitation(p_pi, gamma, start):
    """Discounted state occupancy ``(1-gamma) start^T (I - gamma P_pi)^-1``."""
    n = p_pi.shape[0]
    start = np.asarray(start, dtype=float)
    if n <= DENSE_VISITATION_LIMIT:
        return (1.0 - gamma) * np.linalg.solve(np.eye(n) - gamma * p_pi.T, start)
    return _power_visitation(p_pi, gamma, start)


def _power_visitation(p_pi, gamma, start):
    # truncate once the discarded tail gamma^T / (1 - gamma) is below TAIL_TOL
    out = np.zeros_like(start)
    mass = start.copy()
    weight = 1.0 - gamma
    t = 0
    while True:
        out += weight * mass
        if gamma == 0.0 or gamma ** (t + 1) / (1.0 - gamma) <= TAIL_TOL:
            break
        mass = mass @ p_pi
        weight *= gamma
        t += 1
    return out


def visitation(mdp, kernel, policy, start=None):
    """Discounted visitation ``d(s, a)`` of ``policy`` under ``kernel`` from ``start``.

    ``start`` defaults to ``mdp.rho``. Solved densely when ``|S||A| <= 4096``,
    otherwise by truncated power iteration.
    """
    kernel = check_probability_rows(kernel, "kernel")
    check_shape(kernel, mdp.kernel.shape, "kernel")
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    start = mdp.rho if start is None else check_probability_rows(start, "start")
    p_pi = induced_chain(kernel, probs)
    if mdp.n_states * mdp.n_actions <= DENSE_VISITATION_LIMIT:
        ds = (1.0 - mdp.gamma) * np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi.T, start)
    else:
        ds = _power_visitation(p_pi, mdp.gamma, start)
    return Visitation(ds[:, None] * probs)
