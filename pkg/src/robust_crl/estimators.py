"""scikit-learn style wrappers around the solvers.

``fit`` takes a :class:`TabularCMDP` instead of a design matrix. ``predict``
maps state indices to greedy actions and ``predict_proba`` to the action
distribution of the learned softmax policy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError
from .mdp import TabularCMDP, as_probs, policy_probs
from .online import OnlineConfig, run_method
from .robust import ContaminationSet, robust_value
from .rpd import check_feasibility, rpd_run, setup_schedule
from .td import TDConfig, robust_td, td_value_estimate


def _check_mdp(mdp):
    if not isinstance(mdp, TabularCMDP):
        raise ValidationError(f"expected a TabularCMDP, got {type(mdp).__name__}")
    return mdp


def _check_states(states, n_states):
    if states is None:
        return np.arange(n_states)
    states = np.asarray(states)
    if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
        raise ValidationError("states must be a 1-d array of integer indices")
    if states.size and (states.min() < 0 or states.max() >= n_states):
        raise ValidationError(f"state indices must lie in [0, {n_states})")
    return states


class _PolicyMixin:
    def predict_proba(self, states=None):
        check_is_fitted(self, "theta_")
        return policy_probs(self.theta_)[_check_states(states, self.theta_.shape[0])]

    def predict(self, states=None):
        return self.predict_proba(states).argmax(axis=1)

    def score(self, mdp, signal="reward"):
        """Unsmoothed worst-case value of the learned policy at ``mdp.rho``."""
        check_is_fitted(self, "theta_")
        mdp = _check_mdp(mdp)
        cset = ContaminationSet.around(mdp, self.delta)
        return robust_value(cset, mdp, policy_probs(self.theta_), signal).at(mdp.rho)


class RobustPrimalDual(_PolicyMixin, BaseEstimator):
    """Robust primal-dual with exact smoothed robust gradients.

    Fitted attributes: ``theta_``, ``lambda_``, ``best_``, ``trace_``,
    ``schedule_``, ``info_`` (constants, Slater estimates, dual bound) and
    ``feasibility_``.
    """

    def __init__(self, delta=0.2, sigma=-10.0, n_iter=1000, schedule="theoretical", nu=0.1,
                 tau=3.0, xi=None, alpha=1.0, beta=2.0, b_scale=0.01, lambda_max=None,
                 slater_policies=64, seed=0):
        self.delta = delta
        self.sigma = sigma
        self.n_iter = n_iter
        self.schedule = schedule
        self.nu = nu
        self.tau = tau
        self.xi = xi
        self.alpha = alpha
        self.beta = beta
        self.b_scale = b_scale
        self.lambda_max = lambda_max
        self.slater_policies = slater_policies
        self.seed = seed

    def _schedule_for(self, mdp, cset):
        return setup_schedule(mdp, cset, self.sigma, kind=self.schedule, nu=self.nu, tau=self.tau,
                              xi=self.xi, alpha=self.alpha, beta=self.beta, b_scale=self.b_scale,
                              slater_policies=self.slater_policies, seed=self.seed,
                              lambda_max=self.lambda_max)

    def fit(self, mdp, y=None):
        mdp = _check_mdp(mdp)
        cset = ContaminationSet.around(mdp, self.delta)
        self.schedule_, self.info_ = self._schedule_for(mdp, cset)
        self.best_, self.trace_ = rpd_run(mdp, cset, self.sigma, self.schedule_, int(self.n_iter))
        self.theta_ = np.array(self.best_.theta)
        self.lambda_ = self.best_.lam
        eps = min(r.grad_norm for r in self.trace_[1:])
        self.feasibility_ = check_feasibility(self.best_, self.schedule_, mdp, cset, self.sigma, eps)
        return self


class OnlinePrimalDual(_PolicyMixin, BaseEstimator):
    """Model-free primal-dual driven by TD estimates.

    ``method`` selects the gradient estimator: ``robust_rpd``, ``heuristic_pd``
    or ``nonrobust_pd``. Defaults follow the practical schedule.
    """

    def __init__(self, method="robust_rpd", delta=0.2, sigma=-10.0, n_iter=100, eps_est=0.1,
                 kappa=100.0, inner_cap=100_000, td_step="per_pair", schedule="practical",
                 alpha=1.0, beta=2.0, b_scale=0.01, lambda_max=None, slater_policies=64, seed=0):
        self.method = method
        self.delta = delta
        self.sigma = sigma
        self.n_iter = n_iter
        self.eps_est = eps_est
        self.kappa = kappa
        self.inner_cap = inner_cap
        self.td_step = td_step
        self.schedule = schedule
        self.alpha = alpha
        self.beta = beta
        self.b_scale = b_scale
        self.lambda_max = lambda_max
        self.slater_policies = slater_policies
        self.seed = seed

    def _method(self):
        return self.method

    def fit(self, mdp, y=None):
        mdp = _check_mdp(mdp)
        cset = ContaminationSet.around(mdp, self.delta)
        self.schedule_, self.info_ = setup_schedule(
            mdp, cset, self.sigma, kind=self.schedule, alpha=self.alpha, beta=self.beta,
            b_scale=self.b_scale, slater_policies=self.slater_policies, seed=self.seed,
            lambda_max=self.lambda_max,
        )
        config = OnlineConfig(T=int(self.n_iter), eps_est=self.eps_est, schedule=self.schedule_,
                              sigma=self.sigma, kappa=self.kappa, seed=self.seed,
                              inner_cap=int(self.inner_cap), td_step=self.td_step)
        result = run_method(self._method(), mdp, cset, config)
        self.best_ = result.best
        self.trace_ = result.records
        # the last iterate is what the benchmark reports
        self.theta_ = np.array(result.records[-1].theta)
        self.lambda_ = result.records[-1].lam
        return self


class HeuristicPrimalDual(OnlinePrimalDual):
    """Robust TD evaluation with the vanilla (non-robust) policy gradient."""

    def __init__(self, delta=0.2, sigma=-10.0, n_iter=100, eps_est=0.1, kappa=100.0,
                 inner_cap=100_000, td_step="per_pair", schedule="practical", alpha=1.0, beta=2.0,
                 b_scale=0.01, lambda_max=None, slater_policies=64, seed=0):
        super().__init__("heuristic_pd", delta, sigma, n_iter, eps_est, kappa, inner_cap, td_step,
                         schedule, alpha, beta, b_scale, lambda_max, slater_policies, seed)
        del self.method

    def _method(self):
        return "heuristic_pd"


class NonRobustPrimalDual(OnlinePrimalDual):
    """Nominal TD evaluation and vanilla policy gradient; ``delta`` only affects scoring."""

    def __init__(self, delta=0.2, sigma=-10.0, n_iter=100, eps_est=0.1, kappa=100.0,
                 inner_cap=100_000, td_step="per_pair", schedule="practical", alpha=1.0, beta=2.0,
                 b_scale=0.01, lambda_max=None, slater_policies=64, seed=0):
        super().__init__("nonrobust_pd", delta, sigma, n_iter, eps_est, kappa, inner_cap, td_step,
                         schedule, alpha, beta, b_scale, lambda_max, slater_policies, seed)
        del self.method

    def _method(self):
        return "nonrobust_pd"


class SmoothedRobustTD(BaseEstimator):
    """Estimate ``Q_sigma`` of a fixed policy from one centroid trajectory.

    ``fit(mdp, policy)`` stores ``q_``; ``predict(rho)`` returns the
    policy-weighted value estimate.
    """

    def __init__(self, delta=0.2, sigma=-10.0, inner_steps=100_000, step_size=None,
                 signal="reward", seed=0):
        self.delta = delta
        self.sigma = sigma
        self.inner_steps = inner_steps
        self.step_size = step_size
        self.signal = signal
        self.seed = seed

    def fit(self, mdp, policy=None):
        mdp = _check_mdp(mdp)
        shape = (mdp.n_states, mdp.n_actions)
        probs = np.full(shape, 1.0 / mdp.n_actions) if policy is None else as_probs(policy, shape)
        config = TDConfig(self.inner_steps, self.sigma, self.delta, self.step_size, self.seed)
        self.q_ = robust_td(mdp, probs, config, self.signal)
        self.policy_ = probs
        self.rho_ = np.array(mdp.rho)
        return self

    def predict(self, rho=None):
        check_is_fitted(self, "q_")
        return td_value_estimate(self.q_, self.policy_, self.rho_ if rho is None else rho)
