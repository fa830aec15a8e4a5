"""Exact gradient of the smoothed robust value for tabular softmax policies.

Differentiating the smoothed fixed point ``V = r_pi + g(1-d) P_pi V + g d LSE(V)``
gives, per start state ``s``,

    grad V(s) = B(s) + g d / (1 - g) * sum_s' w(s') B(s'),   w = softmax(sigma V)

with ``B(s) = (I - g(1-d) P_pi)^-1 [s, :] applied to the per-state score terms``.
The resolvent row is ``1 / (1 - g + g d)`` times the normalised visitation of
``pi`` under the centroid kernel with effective discount ``g (1 - d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import ValidationError, check_positive, check_sigma
from .mdp import as_probs, induced_chain
from .robust import lse_weights, smoothed_robust_value


@dataclass(frozen=True, eq=False)
class GradientResult:
    grad_theta: np.ndarray
    value_rho: float
    per_state_B: Optional[np.ndarray] = None


def score_terms(probs, q):
    """``sum_b d pi(b|s) / d theta[s, c] * q(s, b) = pi(c|s) (q(s, c) - v(s))``.

    Row ``s`` is the only non-zero block of the softmax Jacobian at state ``s``.
    """
    v = (probs * q).sum(axis=1, keepdims=True)
    return probs * (q - v)


def _resolvent(p_pi, discount):
    return np.linalg.inv(np.eye(p_pi.shape[0]) - discount * p_pi)


def b_term(mdp, cset, policy, sigma, robust, s):
    """Gradient contribution ``B(s, theta)`` as an ``(S, A)`` array."""
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    if robust.q.shape != probs.shape:
        raise ValidationError(f"robust values have shape {robust.q.shape}, policy {probs.shape}")
    if not 0 <= int(s) < mdp.n_states:
        raise ValidationError(f"state index {s} out of range")
    eff = mdp.gamma * (1.0 - cset.delta)
    p_pi = induced_chain(cset.centroid, probs)
    e = np.zeros(mdp.n_states)
    e[int(s)] = 1.0
    row = np.linalg.solve((np.eye(mdp.n_states) - eff * p_pi).T, e)
    return row[:, None] * score_terms(probs, robust.q)


def gradient_from_q(mdp, cset, probs, q, sigma, rho=None):
    """Assemble ``grad_theta V_sigma(rho)`` from any action-value table ``q``.

    With the exact smoothed ``Q_sigma`` this is the exact gradient; the online
    algorithm feeds TD estimates through the same formula.
    """
    rho = mdp.rho if rho is None else rho
    v = (probs * q).sum(axis=1)
    w = lse_weights(sigma, v)
    gamma, delta = mdp.gamma, cset.delta
    eff = gamma * (1.0 - delta)
    p_pi = induced_chain(cset.centroid, probs)
    # weights over start states: rho plus the LSE correction, then one resolvent solve
    start = rho + (gamma * delta / (1.0 - gamma)) * w
    occ = np.linalg.solve((np.eye(mdp.n_states) - eff * p_pi).T, start)
    return occ[:, None] * score_terms(probs, q)


def nonrobust_gradient_from_q(mdp, probs, q, kernel=None, rho=None):
    """Vanilla policy gradient ``(1/(1-g)) sum_s d_rho(s) sum_a grad pi(a|s) q(s, a)``.

    Uses the centroid visitation and ignores how the worst-case kernel moves
    with the policy.
    """
    kernel = mdp.kernel if kernel is None else kernel
    rho = mdp.rho if rho is None else rho
    p_pi = induced_chain(kernel, probs)
    occ = np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * p_pi).T, rho)
    return occ[:, None] * score_terms(probs, q)


def smoothed_gradient(mdp, cset, policy, sigma, signal="reward", return_b=False, robust=None):
    """``grad_theta V_sigma(rho)`` for the softmax policy.

    ``robust`` may pass precomputed smoothed values for the same policy and signal.
    """
    sigma = check_sigma(sigma)
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    if robust is None:
        robust = smoothed_robust_value(cset, mdp, probs, sigma, signal)
    grad = gradient_from_q(mdp, cset, probs, robust.q, sigma)
    b_stack = None
    if return_b:
        eff = mdp.gamma * (1.0 - cset.delta)
        res = _resolvent(induced_chain(cset.centroid, probs), eff)
        b_stack = res[:, :, None] * score_terms(probs, robust.q)[None, :, :]
    return GradientResult(grad_theta=grad, value_rho=robust.at(mdp.rho), per_state_B=b_stack)


def finite_diff_gradient(mdp, cset, policy, sigma, signal="reward", h=1e-5, func=None, tol=1e-13):
    """Central differences of ``V_sigma(rho)`` (or of ``func(theta)``) in every logit.

    The fixed point is solved to ``tol`` so the truncation error dominates.
    """
    h = check_positive(h, "h")
    theta = np.array(policy.theta if hasattr(policy, "theta") else policy, dtype=float)
    if func is None:
        sigma = check_sigma(sigma)

        def func(th):
            return smoothed_robust_value(cset, mdp, _softmax(th), sigma, signal, tol=tol).at(mdp.rho)

    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up = theta.copy()
        dn = theta.copy()
        up[idx] += h
        dn[idx] -= h
        grad[idx] = (func(up) - func(dn)) / (2.0 * h)
    return grad


def _softmax(theta):
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
