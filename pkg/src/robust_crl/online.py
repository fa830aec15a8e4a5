"""Online model-free primal-dual: robust RPD and the two baselines.

All three methods share the multiplier and logit updates of the exact
algorithm. They differ only in how values and gradients are estimated:

* ``robust_rpd``   smoothed robust TD Q fed into the robust gradient formula
* ``heuristic_pd`` smoothed robust TD Q fed into the vanilla policy gradient
* ``nonrobust_pd`` plain TD(0) Q (no contamination) and the vanilla gradient
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import ValidationError, check_positive, check_sigma
from .gradient import gradient_from_q, nonrobust_gradient_from_q
from .mdp import policy_probs
from .robust import ContaminationSet, robust_value
from .rpd import DualIterate, RunRecord, Schedule, dual_update, mapping_from, primal_update
from .td import STEP_EXPONENT, TDConfig, prepare_sampler, robust_td, td_value_estimate
from . import _kernels

BASELINE_KINDS = ("robust_rpd", "heuristic_pd", "nonrobust_pd")
DEFAULT_INNER_CAP = 200_000


@dataclass(frozen=True)
class OnlineConfig:
    """Outer-loop settings. ``T_inner(t) = min(cap, ceil(kappa (t + 1)^1.5 / eps_est^2))``."""

    T: int
    eps_est: float
    schedule: Schedule
    sigma: float = -10.0
    kappa: float = 1.0
    seed: int = 0
    inner_cap: int = DEFAULT_INNER_CAP
    td_step: object = "per_pair"

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValidationError(f"T must be a positive integer, got {self.T!r}")
        check_positive(self.eps_est, "eps_est")
        check_positive(self.kappa, "kappa")
        check_sigma(self.sigma)
        if self.inner_cap < 1:
            raise ValidationError("inner_cap must be at least 1")

    def inner_steps(self, t):
        raw = math.ceil(self.kappa * (t + 1) ** 1.5 / self.eps_est ** 2)
        return int(min(self.inner_cap, max(raw, 1)))


@dataclass(frozen=True, eq=False)
class OnlineResult:
    method: str
    best: DualIterate
    records: list = field(repr=False)
    final: Optional[DualIterate] = None


def _pd_loop(mdp, cset, config, method):
    if method not in BASELINE_KINDS:
        raise ValidationError(f"unknown method {method!r}")
    td_delta = 0.0 if method == "nonrobust_pd" else cset.delta
    schedule = config.schedule
    children = np.random.SeedSequence(config.seed).spawn(config.T + 1)
    it = DualIterate(np.zeros((mdp.n_states, mdp.n_actions)), 0.0, 0)
    records = []
    best, best_norm = None, np.inf
    for step in range(config.T + 1):
        probs = policy_probs(it.theta)
        td_cfg = TDConfig(config.inner_steps(it.t), config.sigma, td_delta, config.td_step)
        rng = np.random.default_rng(children[step])
        sampler = prepare_sampler(mdp, probs)
        q_r = robust_td(mdp, probs, td_cfg, "reward", rng=rng, sampler=sampler)
        q_c = robust_td(mdp, probs, td_cfg, "utility", rng=rng, sampler=sampler)
        v_r = td_value_estimate(q_r, probs, mdp.rho)
        v_c = td_value_estimate(q_c, probs, mdp.rho)
        if method == "robust_rpd":
            g_r = gradient_from_q(mdp, cset, probs, q_r, config.sigma)
            g_c = gradient_from_q(mdp, cset, probs, q_c, config.sigma)
        else:
            g_r = nonrobust_gradient_from_q(mdp, probs, q_r)
            g_c = nonrobust_gradient_from_q(mdp, probs, q_c)
        slack = v_c - mdp.threshold
        gmap = mapping_from(it.lam, slack, g_r + it.lam * g_c, schedule, it.t)
        records.append(RunRecord(it.t, it.lam, v_r, v_c, gmap.norm, schedule.alpha(it.t),
                                 schedule.beta(it.t), schedule.b(it.t), theta=it.theta))
        if step >= 1 and gmap.norm < best_norm:
            best, best_norm = it, gmap.norm
        if step < config.T:
            lam_next = dual_update(it.lam, slack, schedule, it.t)
            theta_next = primal_update(it.theta, g_r + lam_next * g_c, schedule, it.t)
            it = DualIterate(theta_next, lam_next, it.t + 1)
    return OnlineResult(method, best, records, final=it)


def online_rpd_run(mdp, cset, config):
    """Online robust primal-dual with TD-estimated smoothed robust values."""
    return _pd_loop(mdp, cset, config, "robust_rpd")


def heuristic_pd_run(mdp, cset, config):
    """Robust TD evaluation with the non-robust policy-gradient step."""
    return _pd_loop(mdp, cset, config, "heuristic_pd")


def nonrobust_pd_run(mdp, config):
    """Plain primal-dual on nominal TD estimates; ignores the uncertainty set."""
    return _pd_loop(mdp, ContaminationSet.around(mdp, 0.0), config, "nonrobust_pd")


def run_method(method, mdp, cset, config):
    if method == "nonrobust_pd":
        return nonrobust_pd_run(mdp, config)
    return _pd_loop(mdp, cset, config, method)


EVAL_COLUMNS = ("iterate", "method", "metric", "mean", "p5", "p95", "exact")


@dataclass(frozen=True, eq=False)
class EvalTable:
    """Per-iterate evaluation bands pooled across runs.

    ``exact`` holds the unsmoothed worst-case values ``{"Vr": (runs, iterates), "Vc": ...}``
    and ``estimates`` the raw TD estimates ``(runs, iterates, n_reps)``.
    """

    method: str
    iterates: np.ndarray
    t: np.ndarray
    estimates: dict
    exact: dict

    @property
    def rows(self):
        out = []
        for j, t in enumerate(self.t):
            for metric in ("Vr", "Vc"):
                pooled = self.estimates[metric][:, j, :].ravel()
                out.append((int(t), self.method, metric, float(pooled.mean()),
                            float(np.percentile(pooled, 5)), float(np.percentile(pooled, 95)),
                            float(self.exact[metric][:, j].mean())))
        return out

    def final_exact(self, metric):
        return self.exact[metric][:, -1]


def pool_tables(tables):
    """Stack tables from separate runs of the same method along the run axis."""
    first = tables[0]
    if any(not np.array_equal(tb.t, first.t) for tb in tables):
        raise ValidationError("tables cover different iterates")
    return EvalTable(first.method, first.iterates, first.t,
                     {m: np.concatenate([tb.estimates[m] for tb in tables]) for m in ("Vr", "Vc")},
                     {m: np.concatenate([tb.exact[m] for tb in tables]) for m in ("Vr", "Vc")})


def evaluate_trace(traces, mdp, cset, sigma, n_reps=30, sample_size=200, seed=0, method="",
                   every=1, td_step=None):
    """Re-evaluate logged policies with repeated short robust TD runs.

    ``traces`` is one record list or a list of them (one per training seed).
    For every ``every``-th iterate, each run's policy gets ``n_reps`` TD
    estimates of ``V_r(rho)`` and ``V_c(rho)`` with ``sample_size`` samples; the
    estimates are pooled over runs into mean and 5/95 percentiles. The
    ``exact`` column is the mean over runs of the unsmoothed robust value.
    """
    if n_reps < 1 or sample_size < 1:
        raise ValidationError("n_reps and sample_size must be positive")
    sigma = check_sigma(sigma)
    if traces and isinstance(traces[0], RunRecord):
        traces = [traces]
    n_logged = len(traces[0])
    if any(len(tr) != n_logged for tr in traces):
        raise ValidationError("all traces must have the same length")
    idx = np.arange(0, n_logged, every)
    if idx[-1] != n_logged - 1:
        idx = np.append(idx, n_logged - 1)
    children = np.random.SeedSequence(seed).spawn(len(traces))
    est = {"Vr": np.empty((len(traces), len(idx), n_reps)), "Vc": np.empty((len(traces), len(idx), n_reps))}
    exact = {"Vr": np.empty((len(traces), len(idx))), "Vc": np.empty((len(traces), len(idx)))}
    td_cfg = TDConfig(sample_size, sigma, cset.delta, td_step)
    a, b, const = td_cfg.step_params(mdp.gamma, mdp.n_states * mdp.n_actions)
    sig = {"Vr": np.ascontiguousarray(mdp.reward), "Vc": np.ascontiguousarray(mdp.utility)}
    for k, trace in enumerate(traces):
        rng = np.random.default_rng(children[k])
        for j, i in enumerate(idx):
            probs = policy_probs(trace[i].theta)
            kernel_cum, probs_c, probs_cum, rho_cum, restart = prepare_sampler(mdp, probs)
            for metric, signal in (("Vr", "reward"), ("Vc", "utility")):
                exact[metric][k, j] = robust_value(cset, mdp, probs, signal).at(mdp.rho)
                for rep in range(n_reps):
                    q = np.zeros_like(probs)
                    u = rng.random((3, sample_size))
                    _kernels.robust_td_loop(kernel_cum, probs_c, probs_cum, sig[metric], rho_cum,
                                            mdp.gamma, cset.delta, sigma, sample_size, a, b, STEP_EXPONENT,
                                            const, restart, u[0], u[1], u[2], q)
                    est[metric][k, j, rep] = td_value_estimate(q, probs, mdp.rho)
    t = np.array([int(traces[0][i].t) for i in idx])
    return EvalTable(method, idx, t, est, exact)
