"""Robust evaluation under the delta-contamination uncertainty set.

The set around a centroid kernel ``p`` is ``{(1 - delta) p_s^a + delta q : q in simplex}``.
Its support function has the closed form ``(1 - delta) p_s^a . v + delta min(v)``,
so every robust backup here is a single matrix-vector product plus a minimum
(or its log-sum-exp surrogate when smoothing).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from ._validation import ValidationError, check_delta, check_probability_rows, check_sigma
from .mdp import _signal_array, as_probs, induced_chain

FIXED_POINT_TOL = 1e-10
MAX_SWEEPS = 10_000


@dataclass(frozen=True, eq=False)
class ContaminationSet:
    """delta-contamination ball around the centroid kernel ``centroid[s, a, s']``."""

    delta: float
    centroid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", check_delta(self.delta))
        centroid = np.array(self.centroid, dtype=float)
        centroid.setflags(write=False)
        object.__setattr__(self, "centroid", centroid)

    @classmethod
    def around(cls, mdp, delta):
        return cls(delta, mdp.kernel)

    def vertex(self, s, a, target):
        """Kernel row with all contamination mass on state ``target``."""
        row = (1.0 - self.delta) * self.centroid[s, a].copy()
        row[target] += self.delta
        return row


@dataclass(frozen=True, eq=False)
class RobustValues:
    """Robust (or smoothed robust) state and action values of a fixed policy."""

    v: np.ndarray
    q: np.ndarray
    residual: float
    smoothed: bool
    sigma: Optional[float] = None
    sweeps: int = 0

    def at(self, rho):
        return float(np.dot(rho, self.v))

    def to_dict(self):
        return {
            "v": self.v.tolist(),
            "q": self.q.tolist(),
            "residual": self.residual,
            "smoothed": self.smoothed,
            "sigma": self.sigma,
        }


def lse(sigma, v):
    """Log-sum-exp surrogate ``log(sum exp(sigma v)) / sigma`` of ``min(v)``.

    For ``sigma < 0`` the result lies in ``[min v - ln(n)/|sigma|, min v]``.
    """
    sigma = check_sigma(sigma)
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValidationError("lse of an empty vector")
    m = v.min()
    return float(m + np.log(np.exp(sigma * (v - m)).sum()) / sigma)


def lse_weights(sigma, v):
    """Gradient of :func:`lse` with respect to ``v``: ``softmax(sigma v)``."""
    v = np.asarray(v, dtype=float)
    z = sigma * (v - v.min())
    w = np.exp(z - z.max())
    return w / w.sum()


def _check_set(cset, mdp):
    if cset.centroid.shape != mdp.kernel.shape:
        raise ValidationError(
            f"uncertainty set centroid has shape {cset.centroid.shape}, MDP kernel {mdp.kernel.shape}"
        )


def _expected_next(cset, v):
    # (1 - delta) p_s^a . v for every (s, a)
    return (1.0 - cset.delta) * np.einsum("sat,t->sa", cset.centroid, v)


def robust_q_backup(cset, mdp, v, signal="reward"):
    """``r(s,a) + gamma (delta min v + (1 - delta) p_s^a . v)``."""
    v = np.asarray(v, dtype=float)
    sig = _signal_array(mdp, signal)
    return sig + mdp.gamma * (cset.delta * v.min() + _expected_next(cset, v))


def smoothed_q_backup(cset, mdp, sigma, v, signal="reward"):
    v = np.asarray(v, dtype=float)
    sig = _signal_array(mdp, signal)
    return sig + mdp.gamma * (cset.delta * lse(sigma, v) + _expected_next(cset, v))


def robust_bellman_apply(cset, mdp, policy, v, signal="reward"):
    """One application of the robust Bellman operator ``T_pi`` to ``v``."""
    _check_set(cset, mdp)
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    return (probs * robust_q_backup(cset, mdp, v, signal)).sum(axis=1)


def smoothed_bellman_apply(cset, mdp, policy, sigma, v, signal="reward"):
    """Robust Bellman operator with ``min v`` replaced by ``lse(sigma, v)``."""
    sigma = check_sigma(sigma)
    _check_set(cset, mdp)
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    return (probs * smoothed_q_backup(cset, mdp, sigma, v, signal)).sum(axis=1)


def _policy_terms(cset, mdp, probs, signal):
    sig = _signal_array(mdp, signal)
    p_pi = np.ascontiguousarray(induced_chain(cset.centroid, probs))
    r_pi = np.ascontiguousarray((probs * sig).sum(axis=1))
    return p_pi, r_pi


def robust_value(cset, mdp, policy, signal="reward", tol=FIXED_POINT_TOL, max_sweeps=MAX_SWEEPS):
    """Worst-case value over the contamination set (fixed point of ``T_pi``).

    Picard iteration from zero to a sup-norm residual of ``tol``, then one
    exact linear solve with the minimising state pinned, kept only if it
    lowers the residual.
    """
    _check_set(cset, mdp)
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    p_pi, r_pi = _policy_terms(cset, mdp, probs, signal)
    v, res, sweeps = _kernels.contamination_fixed_point(
        p_pi, r_pi, mdp.gamma, cset.delta, -1.0, False, tol, max_sweeps
    )
    polished = _pinned_solve(p_pi, r_pi, mdp.gamma, cset.delta, int(np.argmin(v)))
    res_polished = np.max(np.abs(_robust_operator(p_pi, r_pi, mdp.gamma, cset.delta, polished) - polished))
    res_v = np.max(np.abs(_robust_operator(p_pi, r_pi, mdp.gamma, cset.delta, v) - v))
    if res_polished <= res_v:
        v, res = polished, res_polished
    else:
        res = res_v
    q = robust_q_backup(cset, mdp, v, signal)
    return RobustValues(v=v, q=q, residual=float(res), smoothed=False, sigma=None, sweeps=int(sweeps))


def _robust_operator(p_pi, r_pi, gamma, delta, v):
    return r_pi + gamma * ((1.0 - delta) * p_pi @ v + delta * v.min())


def _pinned_solve(p_pi, r_pi, gamma, delta, idx):
    # v = r + g(1-d) P v + g d v[idx]  as a linear system
    n = r_pi.shape[0]
    mat = np.eye(n) - gamma * (1.0 - delta) * p_pi
    mat[:, idx] -= gamma * delta
    return np.linalg.solve(mat, r_pi)


def smoothed_robust_value(cset, mdp, policy, sigma, signal="reward", tol=FIXED_POINT_TOL,
                          max_sweeps=MAX_SWEEPS):
    """Fixed point of the smoothed robust Bellman operator, by Picard iteration from zero."""
    sigma = check_sigma(sigma)
    _check_set(cset, mdp)
    probs = as_probs(policy, (mdp.n_states, mdp.n_actions))
    p_pi, r_pi = _policy_terms(cset, mdp, probs, signal)
    v, res, sweeps = _kernels.contamination_fixed_point(
        p_pi, r_pi, mdp.gamma, cset.delta, sigma, True, tol, max_sweeps
    )
    q = smoothed_q_backup(cset, mdp, sigma, v, signal)
    return RobustValues(v=v, q=q, residual=float(res), smoothed=True, sigma=sigma, sweeps=int(sweeps))


def smoothing_gap_bound(gamma, delta, sigma, n_states):
    """Sup-norm bound ``gamma delta ln|S| / (|sigma| (1 - gamma))`` between smoothed and exact values."""
    return gamma * delta * np.log(n_states) / (abs(sigma) * (1.0 - gamma))


def worst_case_kernel(cset, mdp, policy, v):
    """Stationary minimiser ``(1 - delta) p + delta e_{s*}`` with ``s* = argmin v``.

    Ties go to the lowest state index. ``policy`` is accepted for interface
    symmetry; under (s, a)-rectangular contamination the minimiser depends
    on the policy only through ``v``.
    """
    _check_set(cset, mdp)
    as_probs(policy, (mdp.n_states, mdp.n_actions))
    target = int(np.argmin(np.asarray(v, dtype=float)))
    out = (1.0 - cset.delta) * cset.centroid.copy()
    out[:, :, target] += cset.delta
    return out


def robust_optimal_value(cset, mdp, signal="reward", tol=FIXED_POINT_TOL, max_sweeps=MAX_SWEEPS):
    """Optimal robust value ``max_pi V_pi`` by robust value iteration.

    Returns ``(v, greedy_probs)``. Used to calibrate benchmark thresholds.
    """
    _check_set(cset, mdp)
    v = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        q = robust_q_backup(cset, mdp, v, signal)
        new = q.max(axis=1)
        done = np.max(np.abs(new - v)) <= tol
        v = new
        if done:
            break
    q = robust_q_backup(cset, mdp, v, signal)
    greedy = np.zeros_like(q)
    greedy[np.arange(mdp.n_states), q.argmax(axis=1)] = 1.0
    return v, greedy


def check_kernel_in_set(cset, kernel, atol=1e-9):
    """True when every row of ``kernel`` lies in the contamination set."""
    kernel = check_probability_rows(kernel, "kernel", atol=atol)
    slack = kernel - (1.0 - cset.delta) * cset.centroid
    return bool(np.all(slack >= -atol) and np.all(np.abs(slack.sum(axis=-1) - cset.delta) <= atol))
