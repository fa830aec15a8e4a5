"""Smoothed robust TD: sample-based estimate of Q_sigma from one centroid trajectory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from ._validation import ValidationError, check_delta, check_sigma
from .mdp import _signal_array, as_probs, induced_chain

RESTART_EVERY = 1000
STEP_EXPONENT = 0.6


@dataclass(frozen=True)
class TDConfig:
    """Inner-loop settings.

    ``step_size`` is either ``None`` (``alpha_t = 1 / (1 + (1 - gamma) t)^0.6``),
    ``"per_pair"`` (the same rule with the horizon stretched by ``|S||A|``, so
    each state-action entry sees roughly the default schedule), a pair
    ``(a, b)`` for ``alpha_t = a / (t + b)^0.6``, or a positive float for a
    constant step.
    """

    inner_steps: int
    sigma: float = -10.0
    delta: float = 0.0
    step_size: object = None
    seed: int = 0

    def __post_init__(self):
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 0:
            raise ValidationError(f"inner_steps must be a non-negative integer, got {self.inner_steps!r}")
        object.__setattr__(self, "inner_steps", int(self.inner_steps))
        object.__setattr__(self, "sigma", check_sigma(self.sigma))
        object.__setattr__(self, "delta", check_delta(self.delta))
        rule = self.step_size
        if rule is not None and rule != "per_pair":
            if np.isscalar(rule):
                if not float(rule) > 0:
                    raise ValidationError("constant step size must be positive")
            else:
                a, b = rule
                if not (a > 0 and b >= 0):
                    raise ValidationError("step rule (a, b) needs a > 0 and b >= 0")

    def step_params(self, gamma, n_pairs=1):
        """``(a, b, const)`` as consumed by the compiled loop (``const = 0`` means polynomial)."""
        rule = self.step_size
        if rule is None or rule == "per_pair":
            h = 1.0 / (1.0 - gamma)
            if rule == "per_pair":
                h *= n_pairs
            return h ** STEP_EXPONENT, h, 0.0
        if np.isscalar(rule):
            return 1.0, 0.0, float(rule)
        a, b = rule
        return float(a), float(b), 0.0


def sampling_table(p):
    """Cumulative sums along the last axis, with each row's tail pinned to exactly 1.

    Pinning from the last positive entry onwards guarantees that inverse-CDF
    draws with ``u in [0, 1)`` never land on a zero-probability index.
    """
    p = np.asarray(p, dtype=float)
    cum = np.cumsum(p, axis=-1)
    n = p.shape[-1]
    last = n - 1 - np.argmax(p[..., ::-1] > 0, axis=-1)
    cum[np.arange(n) >= last[..., None]] = 1.0
    return np.ascontiguousarray(cum)


def strongly_connected(kernel, probs):
    p_pi = induced_chain(kernel, probs)
    n_comp, _ = connected_components(csr_matrix(p_pi > 0), directed=True, connection="strong")
    return n_comp == 1


def prepare_sampler(mdp, probs):
    """Sampling tables and restart period for one policy, reusable across TD runs."""
    restart = 0 if strongly_connected(mdp.kernel, probs) else RESTART_EVERY
    return (sampling_table(mdp.kernel), np.ascontiguousarray(probs), sampling_table(probs),
            sampling_table(mdp.rho), restart)


def robust_td(mdp, policy, config, signal="reward", rng=None, q0=None, return_range=False,
              sampler=None):
    """Run ``config.inner_steps`` smoothed robust TD updates and return the Q table.

    Samples come from the centroid kernel with actions drawn from ``policy``.
    The target uses ``(1 - delta) V(s') + delta lse(sigma, V)`` where ``V`` is
    the current policy-weighted Q. When the induced chain is not strongly
    connected the trajectory restarts from ``rho`` every 1000 steps.
    """
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    sig = np.ascontiguousarray(_signal_array(mdp, signal), dtype=float)
    q = np.zeros((mdp.n_states, mdp.n_actions)) if q0 is None else np.array(q0, dtype=float)
    if q.shape != probs.shape:
        raise ValidationError(f"q0 has shape {q.shape}, expected {probs.shape}")
    n = config.inner_steps
    if n == 0:
        return (q, (float(q.min()), float(q.max()))) if return_range else q
    if rng is None:
        rng = np.random.default_rng(config.seed)
    kernel_cum, probs_c, probs_cum, rho_cum, restart = (
        prepare_sampler(mdp, probs) if sampler is None else sampler
    )
    u_act = rng.random(n)
    u_next = rng.random(n)
    u_start = rng.random(1 + (n // restart if restart else 0))
    a, b, const = config.step_params(mdp.gamma, mdp.n_states * mdp.n_actions)
    qmin, qmax = _kernels.robust_td_loop(
        kernel_cum, probs_c, probs_cum, sig, rho_cum, mdp.gamma, config.delta, config.sigma,
        n, a, b, STEP_EXPONENT, const, restart, u_act, u_next, u_start, q,
    )
    return (q, (qmin, qmax)) if return_range else q


def td_value_estimate(q, policy, rho):
    """``sum_s rho(s) sum_a pi(a|s) q(s, a)``."""
    q = np.asarray(q, dtype=float)
    probs = as_probs(policy, q.shape)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (q.shape[0],):
        raise ValidationError(f"rho has shape {rho.shape}, expected ({q.shape[0]},)")
    return float(rho @ (probs * q).sum(axis=1))
