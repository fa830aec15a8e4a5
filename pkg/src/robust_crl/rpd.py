"""Robust primal-dual (RPD) with exact smoothed gradients.

Each step takes a regularised projected descent step on the multiplier and
then a gradient ascent step on the logits using the *new* multiplier. The
logit space is all of ``R^{S x A}``, so the primal projection is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import ValidationError, check_discount, check_positive, check_sigma
from .gradient import gradient_from_q
from .mdp import SoftmaxPolicy, policy_probs
from .robust import robust_value, smoothed_robust_value, smoothing_gap_bound

# sup ||grad pi(a|s)|| and an upper bound on sup ||hess pi(a|s)|| for tabular softmax
SOFTMAX_K = math.sqrt(2.0) / 4.0
SOFTMAX_L = 0.5

CSV_COLUMNS = ("t", "lambda", "V_sigma_r_rho", "V_sigma_c_rho", "grad_mapping_norm",
               "alpha_t", "beta_t", "b_t")


def constants(n_states, n_actions, gamma, delta, sigma, k=SOFTMAX_K, l=SOFTMAX_L):
    """Closed-form smoothness constants ``L_V, C_sigma, C_sigma^V, k_B, L_sigma``.

    ``sigma`` enters through ``|sigma|`` so that every correction term is
    non-negative.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValidationError(f"gamma must be in [0, 1), got {gamma!r}")
    s_abs = abs(float(sigma))
    log_s = math.log(n_states)
    a = n_actions
    denom = 1.0 - gamma + gamma * delta
    l_v = k * a / (1.0 - gamma) ** 2
    c_sigma = (1.0 + 2.0 * gamma * delta * log_s / s_abs) / (1.0 - gamma)
    c_v = a * k * c_sigma / (1.0 - gamma)
    k_b = (a * c_sigma * l + a * k * c_v) / denom \
        + 2.0 * a ** 2 * gamma * (1.0 - delta) * k ** 2 * c_sigma / denom ** 2
    l_sigma = k_b + gamma * delta / (1.0 - gamma) * (
        math.sqrt(n_states) * k_b + 2.0 * s_abs * n_states * c_v * k * a * c_sigma / denom
    )
    return {"L_V": l_v, "C_sigma": c_sigma, "C_sigma_V": c_v, "k_B": k_b, "L_sigma": l_sigma}


def lambda_star(zeta, zeta_prime, c_sigma, gamma):
    """Dual bound ``max(2 C_sigma / zeta', 2 / (zeta (1 - gamma)))``."""
    zeta = check_positive(zeta, "zeta")
    zeta_prime = check_positive(zeta_prime, "zeta_prime")
    gamma = check_discount(gamma)
    return max(2.0 * c_sigma / zeta_prime, 2.0 / (zeta * (1.0 - gamma)))


def estimate_slater(mdp, cset, sigma, n_policies=64, seed=0, floor=0.05):
    """Empirical Slater constants ``(zeta, zeta')``.

    ``zeta`` is the best robust constraint slack over ``n_policies`` random
    softmax policies, floored at ``floor``. ``zeta'`` subtracts the smoothing
    gap bound and is floored at ``zeta / 2``. Any positive under-estimate is
    admissible; it only enlarges the dual bound.
    """
    rng = np.random.default_rng(seed)
    best = -np.inf
    for _ in range(n_policies):
        theta = rng.normal(size=(mdp.n_states, mdp.n_actions))
        vc = robust_value(cset, mdp, policy_probs(theta), "utility").at(mdp.rho)
        best = max(best, vc - mdp.threshold)
    zeta = max(float(best), floor)
    gap = smoothing_gap_bound(mdp.gamma, cset.delta, sigma, mdp.n_states)
    zeta_prime = max(zeta - gap, zeta / 2.0)
    return zeta, zeta_prime


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``alpha_t`` (primal), ``beta_t`` (dual) and regulariser ``b_t``.

    ``kind="theoretical"`` uses ``b_t = 19 / (20 xi t^0.25)``, ``beta_t = 1/xi``,
    ``alpha_t = nu + mu_t`` with ``mu_t = xi C^2 + 16 tau C^2 / (xi b_{t+1}^2) - 2 nu``.
    ``kind="practical"`` keeps ``alpha`` and ``beta`` constant and uses
    ``b_t = b_scale / t^0.25``. In both, ``b_0`` is defined as ``b_1``.
    """

    kind: str
    lambda_max: float
    xi: float = 1.0
    nu: float = 0.1
    tau: float = 3.0
    c_v: float = 1.0
    alpha_const: float = 1.0
    beta_const: float = 1.0
    b_scale: float = 0.0
    xi_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("theoretical", "practical"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if not self.lambda_max > 0:
            raise ValidationError("lambda_max must be positive")
        if self.kind == "theoretical":
            if not self.nu > 0 or not self.tau > 2:
                raise ValidationError("theoretical schedule needs nu > 0 and tau > 2")
            if not self.xi > self.xi_min:
                raise ValidationError(f"xi={self.xi} violates xi > {self.xi_min}")
        elif not (self.alpha_const > 0 and self.beta_const > 0 and self.b_scale >= 0):
            raise ValidationError("practical schedule needs alpha, beta > 0 and b_scale >= 0")

    @classmethod
    def theoretical(cls, consts, lambda_max, nu=0.1, tau=3.0, xi=None):
        c_v = consts["C_sigma_V"]
        xi_min = (2.0 * nu + (1.0 + lambda_max) * consts["L_sigma"]) / c_v ** 2
        if xi is None:
            xi = 1.05 * xi_min
        return cls(kind="theoretical", lambda_max=float(lambda_max), xi=float(xi), nu=float(nu),
                   tau=float(tau), c_v=float(c_v), xi_min=float(xi_min))

    @classmethod
    def practical(cls, lambda_max, alpha=10.0, beta=2.0, b_scale=0.01):
        return cls(kind="practical", lambda_max=float(lambda_max), alpha_const=float(alpha),
                   beta_const=float(beta), b_scale=float(b_scale))

    def b(self, t):
        t = max(int(t), 1)
        if self.kind == "theoretical":
            return 19.0 / (20.0 * self.xi * t ** 0.25)
        return self.b_scale / t ** 0.25

    def beta(self, t):
        return 1.0 / self.xi if self.kind == "theoretical" else self.beta_const

    def mu(self, t):
        c2 = self.c_v ** 2
        return self.xi * c2 + 16.0 * self.tau * c2 / (self.xi * self.b(t + 1) ** 2) - 2.0 * self.nu

    def alpha(self, t):
        if self.kind == "theoretical":
            return self.nu + self.mu(t)
        return self.alpha_const

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class DualIterate:
    theta: np.ndarray
    lam: float
    t: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def policy(self):
        return SoftmaxPolicy(self.theta)


@dataclass(frozen=True, eq=False)
class GradMapping:
    g_lambda: float
    g_theta: np.ndarray
    norm: float


@dataclass(frozen=True, eq=False)
class RunRecord:
    """One logged iterate. ``theta`` is kept for evaluation but not written to CSV."""

    t: int
    lam: float
    v_r: float
    v_c: float
    grad_norm: float
    alpha: float
    beta: float
    b: float
    theta: Optional[np.ndarray] = field(default=None, repr=False)

    def row(self):
        return (self.t, self.lam, self.v_r, self.v_c, self.grad_norm, self.alpha, self.beta, self.b)


@dataclass(frozen=True)
class PointEval:
    """Smoothed values and gradients of both signals at one ``theta``."""

    v_r: float
    v_c: float
    grad_r: np.ndarray
    grad_c: np.ndarray


def evaluate_point(mdp, cset, theta, sigma):
    probs = policy_probs(theta)
    out = []
    for signal in ("reward", "utility"):
        vals = smoothed_robust_value(cset, mdp, probs, sigma, signal)
        out.append((vals.at(mdp.rho), gradient_from_q(mdp, cset, probs, vals.q, sigma)))
    (v_r, g_r), (v_c, g_c) = out
    return PointEval(v_r, v_c, g_r, g_c)


def lagrangian(mdp, cset, theta, lam, sigma):
    """Smoothed Lagrangian ``V_r(rho) + lam (V_c(rho) - b)``."""
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    sigma = check_sigma(sigma)
    probs = policy_probs(theta)
    v_r = smoothed_robust_value(cset, mdp, probs, sigma, "reward").at(mdp.rho)
    v_c = smoothed_robust_value(cset, mdp, probs, sigma, "utility").at(mdp.rho)
    return v_r + lam * (v_c - mdp.threshold)


def dual_update(lam, slack, schedule, t):
    """``clip(lam - (slack + b_t lam) / beta_t, 0, Lambda*)`` with ``slack = V_c - b``."""
    beta = schedule.beta(t)
    raw = lam - slack / beta - schedule.b(t) * lam / beta
    return float(min(max(raw, 0.0), schedule.lambda_max))


def primal_update(theta, direction, schedule, t):
    return np.asarray(theta) + direction / schedule.alpha(t)


def mapping_from(lam, slack, grad_l_theta, schedule, t):
    """Gradient mapping from the Lagrangian partials at ``(theta_t, lam_t)``."""
    beta = schedule.beta(t)
    projected = min(max(lam - slack / beta, 0.0), schedule.lambda_max)
    g_lambda = beta * (lam - projected)
    g_theta = -np.asarray(grad_l_theta)
    norm = math.sqrt(g_lambda ** 2 + float(np.sum(g_theta ** 2)))
    return GradMapping(float(g_lambda), g_theta, norm)


def gradient_mapping(iterate, schedule, mdp, cset, sigma, point=None):
    point = evaluate_point(mdp, cset, iterate.theta, sigma) if point is None else point
    grad_l = point.grad_r + iterate.lam * point.grad_c
    return mapping_from(iterate.lam, point.v_c - mdp.threshold, grad_l, schedule, iterate.t)


def rpd_step(iterate, schedule, mdp, cset, sigma, point=None):
    """One RPD step: multiplier first, then logits with the updated multiplier."""
    point = evaluate_point(mdp, cset, iterate.theta, sigma) if point is None else point
    t = iterate.t
    lam_next = dual_update(iterate.lam, point.v_c - mdp.threshold, schedule, t)
    theta_next = primal_update(iterate.theta, point.grad_r + lam_next * point.grad_c, schedule, t)
    return DualIterate(theta_next, lam_next, t + 1)


def rpd_run(mdp, cset, sigma, schedule, T, init=None):
    """Run ``T`` RPD steps and return ``(iterate with smallest ||G_t||, trace)``.

    The trace holds iterates ``t = 0..T``; the best iterate is chosen among
    ``1 <= t <= T``.
    """
    if T < 1:
        raise ValidationError("T must be at least 1")
    sigma = check_sigma(sigma)
    if init is None:
        init = DualIterate(np.zeros((mdp.n_states, mdp.n_actions)), 0.0, 0)
    it = init
    records = []
    best, best_norm = None, np.inf
    for step in range(T + 1):
        point = evaluate_point(mdp, cset, it.theta, sigma)
        gmap = gradient_mapping(it, schedule, mdp, cset, sigma, point=point)
        records.append(RunRecord(it.t, it.lam, point.v_r, point.v_c, gmap.norm,
                                 schedule.alpha(it.t), schedule.beta(it.t), schedule.b(it.t),
                                 theta=it.theta))
        if step >= 1 and gmap.norm < best_norm:
            best, best_norm = it, gmap.norm
        if step < T:
            it = rpd_step(it, schedule, mdp, cset, sigma, point=point)
    return best, records


@dataclass(frozen=True)
class FeasibilityReport:
    slack: float
    epsilon: float
    feasible: bool
    hypothesis_holds: bool
    threshold_attainable: bool

    def to_dict(self):
        return dict(self.__dict__)


def check_feasibility(best, schedule, mdp, cset, sigma, epsilon):
    """Constraint slack at ``best`` and whether it is within the ``2 epsilon`` allowance.

    Also reports whether the pre-projection multiplier step lands in
    ``[0, Lambda*)``, which the feasibility guarantee assumes, and whether
    ``b`` is attainable at all (``b <= 1 / (1 - gamma)``).
    """
    probs = policy_probs(best.theta)
    v_c = smoothed_robust_value(cset, mdp, probs, sigma, "utility").at(mdp.rho)
    slack = v_c - mdp.threshold
    pre = best.lam - slack / schedule.beta(best.t)
    attainable = mdp.threshold <= 1.0 / (1.0 - mdp.gamma)
    return FeasibilityReport(
        slack=float(slack),
        epsilon=float(epsilon),
        feasible=bool(attainable and slack >= -2.0 * epsilon),
        hypothesis_holds=bool(attainable and 0.0 <= pre < schedule.lambda_max),
        threshold_attainable=bool(attainable),
    )


def setup_schedule(mdp, cset, sigma, kind="theoretical", nu=0.1, tau=3.0, xi=None, alpha=1.0,
                   beta=2.0, b_scale=0.01, slater_policies=64, seed=0, lambda_max=None):
    """Constants, Slater estimates, dual bound and schedule for one problem.

    Returns ``(schedule, info)`` where ``info`` carries everything a run
    manifest needs to reproduce the schedule.
    """
    sigma = check_sigma(sigma)
    consts = constants(mdp.n_states, mdp.n_actions, mdp.gamma, cset.delta, sigma)
    zeta, zeta_prime = estimate_slater(mdp, cset, sigma, n_policies=slater_policies, seed=seed)
    lam_star = lambda_star(zeta, zeta_prime, consts["C_sigma"], mdp.gamma)
    bound = lam_star if lambda_max is None else float(lambda_max)
    if kind == "theoretical":
        schedule = Schedule.theoretical(consts, bound, nu=nu, tau=tau, xi=xi)
    elif kind == "practical":
        schedule = Schedule.practical(bound, alpha=alpha, beta=beta, b_scale=b_scale)
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    info = {"constants": consts, "zeta": zeta, "zeta_prime": zeta_prime, "lambda_star": lam_star,
            "softmax_k": SOFTMAX_K, "softmax_l": SOFTMAX_L}
    return schedule, info
