"""Compiled inner loops. Everything here works on plain float64 arrays."""

import numpy as np
from numba import njit


@njit(cache=True)
def lse_min(v, sigma):
    # log-sum-exp surrogate of min(v); shifting by min keeps every exponent <= 0
    m = v[0]
    for i in range(1, v.shape[0]):
        if v[i] < m:
            m = v[i]
    acc = 0.0
    for i in range(v.shape[0]):
        acc += np.exp(sigma * (v[i] - m))
    return m + np.log(acc) / sigma


@njit(cache=True)
def contamination_fixed_point(p_pi, r_pi, gamma, delta, sigma, smooth, tol, max_iter):
    """Picard iteration from zero for ``v = r + g(1-d) P v + g d m(v)``.

    ``m`` is the exact minimum when ``smooth`` is False, otherwise the
    log-sum-exp surrogate with parameter ``sigma``. Returns ``(v, residual, sweeps)``.
    """
    n = r_pi.shape[0]
    v = np.zeros(n)
    new = np.empty(n)
    res = np.inf
    sweeps = 0
    while sweeps < max_iter:
        if delta > 0.0:
            if smooth:
                m = lse_min(v, sigma)
            else:
                m = v.min()
        else:
            m = 0.0
        res = 0.0
        for s in range(n):
            acc = 0.0
            for t in range(n):
                acc += p_pi[s, t] * v[t]
            new[s] = r_pi[s] + gamma * (1.0 - delta) * acc + gamma * delta * m
            d = abs(new[s] - v[s])
            if d > res:
                res = d
        v[:] = new
        sweeps += 1
        if res <= tol:
            break
    return v, res, sweeps


@njit(cache=True)
def _draw(cum, u):
    # first index whose cumulative mass exceeds u
    lo = 0
    hi = cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _lse_acc(v, sigma, ref):
    acc = 0.0
    for i in range(v.shape[0]):
        acc += np.exp(sigma * (v[i] - ref))
    return acc


@njit(cache=True)
def robust_td_loop(kernel_cum, probs, probs_cum, signal, rho_cum, gamma, delta, sigma,
                   n_steps, step_a, step_b, step_exp, const_step, restart_every,
                   u_act, u_next, u_start, q):
    """Smoothed robust TD on a single centroid trajectory; updates ``q`` in place.

    ``lse(sigma, V)`` is maintained as ``ref + log(acc) / sigma`` and patched
    for the one state whose value changes per step; ``acc`` is rebuilt from
    scratch whenever a patch could lose precision. Returns the ``(min, max)``
    of all Q entries seen during the run.
    """
    n_s, n_a = probs.shape
    v = np.zeros(n_s)
    for s in range(n_s):
        acc = 0.0
        for a in range(n_a):
            acc += probs[s, a] * q[s, a]
        v[s] = acc
    qmin = q.min() if n_steps > 0 else 0.0
    qmax = q.max() if n_steps > 0 else 0.0
    ref = v.min()
    lse_acc = _lse_acc(v, sigma, ref)
    # patches carry absolute error ~ eps * (acc at last rebuild); rebuild before it matters
    floor = 1e-3 * lse_acc
    restarts = 0
    s = _draw(rho_cum, u_start[0])
    for t in range(n_steps):
        if restart_every > 0 and t > 0 and t % restart_every == 0:
            restarts += 1
            s = _draw(rho_cum, u_start[restarts])
        a = _draw(probs_cum[s], u_act[t])
        s_next = _draw(kernel_cum[s, a], u_next[t])
        if delta > 0.0:
            m = ref + np.log(lse_acc) / sigma
        else:
            m = 0.0
        target = signal[s, a] + gamma * (1.0 - delta) * v[s_next] + gamma * delta * m
        if const_step > 0.0:
            alpha = const_step
        else:
            alpha = step_a / (t + step_b) ** step_exp
        q[s, a] += alpha * (target - q[s, a])
        if q[s, a] < qmin:
            qmin = q[s, a]
        if q[s, a] > qmax:
            qmax = q[s, a]
        acc = 0.0
        for b in range(n_a):
            acc += probs[s, b] * q[s, b]
        if delta > 0.0:
            old_term = np.exp(sigma * (v[s] - ref))
            z = sigma * (acc - ref)
            v[s] = acc
            patched = lse_acc - old_term + np.exp(z) if z <= 30.0 else -1.0
            if patched < floor:
                ref = v.min()
                lse_acc = _lse_acc(v, sigma, ref)
                floor = 1e-3 * lse_acc
            else:
                lse_acc = patched
        else:
            v[s] = acc
        s = s_next
    return qmin, qmax
