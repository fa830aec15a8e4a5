"""Three-state witness that robust visitation distributions do not form a convex set.

State 1 chooses between action a (reward 0, go to 2) and action b (reward 2,
go to 3); states 2 and 3 pay 1 and return to 1. Both actions are given the
same effect at states 2 and 3, so the tabular MDP has two actions everywhere.
Rewards are kept at their raw values; the MDP is built without range checks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._validation import ValidationError
from .mdp import TabularCMDP, visitation
from .robust import ContaminationSet, robust_value, worst_case_kernel

CLOSED_FORM_TOL = 1e-9
VERDICT_TOL = 1e-6


def three_state_mdp(gamma):
    kernel = np.zeros((3, 2, 3))
    kernel[0, 0, 1] = 1.0
    kernel[0, 1, 2] = 1.0
    kernel[1, :, 0] = 1.0
    kernel[2, :, 0] = 1.0
    reward = np.array([[0.0, 2.0], [1.0, 1.0], [1.0, 1.0]])
    rho = np.array([1.0, 0.0, 0.0])
    return TabularCMDP(kernel, reward, (np.zeros((3, 2)),), gamma, rho, (0.0,),
                       meta={"kind": "three_state_counterexample"}, validate=False)


def mixed_policy(p):
    """``p`` = probability of action a at state 1; states 2 and 3 play a and b."""
    return np.array([[p, 1.0 - p], [1.0, 0.0], [0.0, 1.0]])


def closed_form_visitations(gamma):
    head = (1.0 - gamma) / (1.0 - gamma ** 2)
    tail = gamma * (1.0 - gamma) / (1.0 - gamma ** 2)
    d1 = np.zeros((3, 2))
    d1[0, 0], d1[1, 0] = head, tail
    d2 = np.zeros((3, 2))
    d2[0, 1], d2[2, 1] = head, tail
    return d1, d2


def solve_by_argmin(gamma, delta, probs, reward):
    """Robust values found by enumerating the minimising state.

    For each candidate ``k`` the robust Bellman equations are linear once
    ``min V`` is replaced by ``V[k]``; the candidate whose solution actually
    has its minimum at ``k`` is the fixed point. Returns ``(v, k)``.
    """
    mdp = three_state_mdp(gamma)
    p_pi = np.einsum("sa,sat->st", probs, mdp.kernel)
    r_pi = (probs * reward).sum(axis=1)
    for k in range(3):
        mat = np.eye(3) - gamma * (1.0 - delta) * p_pi
        mat[:, k] -= gamma * delta
        v = np.linalg.solve(mat, r_pi)
        if v[k] <= v.min() + 1e-12:
            return v, k
    raise RuntimeError("no consistent minimising state")


@dataclass(frozen=True)
class CounterexampleReport:
    gamma: float
    delta: float
    mix: float
    pi_prime: list
    v_pi_prime: list
    v_pi_prime_linear: list
    argmin_pi1: int
    argmin_pi2: int
    argmin_pi_prime: int
    d1_robust: list
    d2_robust: list
    d1_nominal: list
    d2_nominal: list
    d1_closed_form: list
    d2_closed_form: list
    closed_form_max_err_robust: float
    closed_form_max_err_nominal: float
    closed_form_match_robust: bool
    closed_form_match_nominal: bool
    verdict: bool

    def to_dict(self):
        return asdict(self)


def run_counterexample(gamma=0.9, delta=0.1, mix=1.0 / 3.0):
    """Build the witness for ``(gamma, delta)`` and report the visitations and verdict.

    Visitations are reported both under each policy's worst-case kernel
    (``*_robust``) and under the nominal kernel (``*_nominal``), each compared
    with the closed forms to ``1e-9``. The mixed policy plays a at state 1 with
    probability ``mix``; the verdict is ``|V(1) - V(2)| > 1e-6``.
    """
    if not (0.0 < gamma < 1.0 and 0.0 < delta < 1.0):
        raise ValidationError("counterexample needs gamma and delta in (0, 1)")
    mdp = three_state_mdp(gamma)
    cset = ContaminationSet.around(mdp, delta)
    pi1, pi2 = mixed_policy(1.0), mixed_policy(0.0)
    closed1, closed2 = closed_form_visitations(gamma)

    robust_d, nominal_d, argmins = [], [], []
    for pi in (pi1, pi2):
        vals = robust_value(cset, mdp, pi)
        argmins.append(int(np.argmin(vals.v)))
        wc = worst_case_kernel(cset, mdp, pi, vals.v)
        robust_d.append(visitation(mdp, wc, pi).d)
        nominal_d.append(visitation(mdp, mdp.kernel, pi).d)

    err_rob = max(np.abs(robust_d[0] - closed1).max(), np.abs(robust_d[1] - closed2).max())
    err_nom = max(np.abs(nominal_d[0] - closed1).max(), np.abs(nominal_d[1] - closed2).max())

    pi_prime = mixed_policy(mix)
    v_prime = robust_value(cset, mdp, pi_prime).v
    v_lin, k = solve_by_argmin(gamma, delta, pi_prime, np.asarray(mdp.reward))
    return CounterexampleReport(
        gamma=float(gamma), delta=float(delta), mix=float(mix),
        pi_prime=pi_prime.tolist(),
        v_pi_prime=v_prime.tolist(), v_pi_prime_linear=v_lin.tolist(),
        argmin_pi1=argmins[0], argmin_pi2=argmins[1], argmin_pi_prime=int(k),
        d1_robust=robust_d[0].tolist(), d2_robust=robust_d[1].tolist(),
        d1_nominal=nominal_d[0].tolist(), d2_nominal=nominal_d[1].tolist(),
        d1_closed_form=closed1.tolist(), d2_closed_form=closed2.tolist(),
        closed_form_max_err_robust=float(err_rob), closed_form_max_err_nominal=float(err_nom),
        closed_form_match_robust=bool(err_rob <= CLOSED_FORM_TOL),
        closed_form_match_nominal=bool(err_nom <= CLOSED_FORM_TOL),
        verdict=bool(abs(v_lin[0] - v_lin[1]) > VERDICT_TOL),
    )
