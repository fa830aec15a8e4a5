"""Seeded generators for the benchmark CMDPs.

All signals are affinely rescaled into ``[0, 1]``; the map used is stored in
``mdp.meta["rescale"]`` as ``{"reward": [offset, scale], "utility": [...]}``
with ``scaled = (raw - offset) / scale``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ._validation import ValidationError, check_discount
from .mdp import TabularCMDP, evaluate, policy_probs
from .robust import ContaminationSet, robust_optimal_value, robust_value

DEFAULT_GAMMA = 0.95
THRESHOLD_POLICIES = 64

FROZEN_LAKE_MAPS = {
    4: ["SFFF", "FHFH", "FFFH", "HFFG"],
    8: ["SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF",
        "FFFHFFFF", "FHHFFFHF", "FHFFHFHF", "FFFHFFFG"],
}

TAXI_MAP = [
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
]
TAXI_DEPOTS = [(0, 0), (0, 4), (4, 0), (4, 3)]


def _finish(kernel, reward, utility, gamma, rho, threshold, seed, meta):
    gamma = check_discount(gamma)
    if threshold is None:
        draft = TabularCMDP(kernel, reward, (utility,), gamma, rho, (0.0,), meta=meta)
        threshold = default_threshold(draft, seed)
        meta = dict(meta, threshold_rule="0.5 * max nominal V_c(rho) over 64 random policies")
    return TabularCMDP(kernel, reward, (utility,), gamma, rho, (float(threshold),), meta=meta)


def default_threshold(mdp, seed=0, n_policies=THRESHOLD_POLICIES):
    """Half the best nominal utility value over random softmax policies."""
    rng = np.random.default_rng([int(seed), 1])
    best = 0.0
    for _ in range(n_policies):
        probs = policy_probs(rng.normal(size=(mdp.n_states, mdp.n_actions)))
        best = max(best, float(mdp.rho @ evaluate(mdp, mdp.kernel, probs, "utility")))
    return 0.5 * best


def robust_threshold(mdp, delta, frac=0.5):
    """Threshold between the reward-greedy policy's robust utility and the best robust utility.

    ``b = V_c(pi_r) + frac * (max_pi V_c(pi) - V_c(pi_r))`` with all utility
    values worst-case under the ``delta`` set and ``pi_r`` the nominal
    reward-optimal policy. Puts the constraint in the regime where it binds.
    """
    cset = ContaminationSet.around(mdp, delta)
    nominal = ContaminationSet.around(mdp, 0.0)
    _, greedy_r = robust_optimal_value(nominal, mdp, "reward")
    low = robust_value(cset, mdp, greedy_r, "utility").at(mdp.rho)
    v_best, _ = robust_optimal_value(cset, mdp, "utility")
    high = float(mdp.rho @ v_best)
    return low + frac * (high - low)


def garnet(sn, an, seed, gamma=DEFAULT_GAMMA, threshold=None):
    """Garnet ``G(sn, an)``: Dirichlet(1) kernel rows, uniform rewards and utilities."""
    if sn < 2 or an < 1:
        raise ValidationError("garnet needs sn >= 2 and an >= 1")
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(sn), size=(sn, an))
    reward = rng.uniform(size=(sn, an))
    utility = rng.uniform(size=(sn, an))
    rho = np.full(sn, 1.0 / sn)
    meta = {"kind": "garnet", "sn": sn, "an": an, "seed": seed,
            "rescale": {"reward": [0.0, 1.0], "utility": [0.0, 1.0]}}
    return _finish(kernel, reward, utility, gamma, rho, threshold, seed, meta)


def frozen_lake(size=4, seed=0, gamma=DEFAULT_GAMMA, threshold=None):
    """Slippery Frozen-Lake on the standard 4x4 or 8x8 map.

    Actions are LEFT, DOWN, RIGHT, UP. The intended move and each of the two
    perpendicular moves happen with probability 1/3. Holes pay raw reward -10
    and utility 0, the goal pays 20 and 1, other cells pay reward 0 and a
    Uniform[0, 1] utility per state-action. Holes and the goal send the agent
    back to the start cell.
    """
    if size not in FROZEN_LAKE_MAPS:
        raise ValidationError("frozen_lake size must be 4 or 8")
    grid = FROZEN_LAKE_MAPS[size]
    n = size * size
    rng = np.random.default_rng(seed)
    utility = rng.uniform(size=(n, 4))
    raw_reward = np.zeros((n, 4))
    kernel = np.zeros((n, 4, n))
    moves = [(0, -1), (1, 0), (0, 1), (-1, 0)]
    start = 0
    for r in range(size):
        for c in range(size):
            s = r * size + c
            cell = grid[r][c]
            if cell in "HG":
                kernel[s, :, start] = 1.0
                raw_reward[s] = -10.0 if cell == "H" else 20.0
                utility[s] = 0.0 if cell == "H" else 1.0
                continue
            for a in range(4):
                for slip in (a - 1, a, a + 1):
                    dr, dc = moves[slip % 4]
                    nr = min(max(r + dr, 0), size - 1)
                    nc = min(max(c + dc, 0), size - 1)
                    kernel[s, a, nr * size + nc] += 1.0 / 3.0
    rho = np.zeros(n)
    rho[start] = 1.0
    reward = (raw_reward + 10.0) / 30.0
    meta = {"kind": "frozen_lake", "size": size, "seed": seed,
            "rescale": {"reward": [-10.0, 30.0], "utility": [0.0, 1.0]}}
    return _finish(kernel, reward, utility, gamma, rho, threshold, seed, meta)


def _taxi_walls():
    # east-west blocking: wall between (r, c) and (r, c+1)
    blocked = set()
    for r in range(5):
        line = TAXI_MAP[r + 1]
        for c in range(4):
            if line[2 * c + 2] == "|":
                blocked.add((r, c))
    return blocked


def taxi_encode(row, col, passenger, dest):
    return ((row * 5 + col) * 5 + passenger) * 4 + dest


def taxi_decode(s):
    dest = s % 4
    s //= 4
    passenger = s % 5
    s //= 5
    return s // 5, s % 5, passenger, dest


def taxi(seed=0, gamma=DEFAULT_GAMMA, threshold=None):
    """5x5 Taxi with four depots: 500 states, 6 actions.

    Actions are SOUTH, NORTH, EAST, WEST, PICKUP, DROPOFF. A successful
    drop-off pays raw reward 20 and restarts from the initial distribution;
    every other step pays -1. Utilities are Uniform[0, 1] per state-action.
    """
    n_s, n_a = 500, 6
    rng = np.random.default_rng(seed)
    utility = rng.uniform(size=(n_s, n_a))
    walls = _taxi_walls()
    rho = np.zeros(n_s)
    for row in range(5):
        for col in range(5):
            for p in range(4):
                for d in range(4):
                    if p != d:
                        rho[taxi_encode(row, col, p, d)] = 1.0
    rho /= rho.sum()
    kernel = np.zeros((n_s, n_a, n_s))
    raw_reward = np.full((n_s, n_a), -1.0)
    for s in range(n_s):
        row, col, p, d = taxi_decode(s)
        for a in range(n_a):
            nr, nc, np_ = row, col, p
            if a == 0:
                nr = min(row + 1, 4)
            elif a == 1:
                nr = max(row - 1, 0)
            elif a == 2 and (row, col) not in walls:
                nc = min(col + 1, 4)
            elif a == 3 and (row, col - 1) not in walls:
                nc = max(col - 1, 0)
            elif a == 4:
                if p < 4 and (row, col) == TAXI_DEPOTS[p]:
                    np_ = 4
            elif a == 5 and p == 4:
                if (row, col) == TAXI_DEPOTS[d]:
                    raw_reward[s, a] = 20.0
                    kernel[s, a] = rho
                    continue
                if (row, col) in TAXI_DEPOTS:
                    np_ = TAXI_DEPOTS.index((row, col))
            kernel[s, a, taxi_encode(nr, nc, np_, d)] = 1.0
    reward = (raw_reward + 1.0) / 21.0
    meta = {"kind": "taxi", "seed": seed,
            "rescale": {"reward": [-1.0, 21.0], "utility": [0.0, 1.0]}}
    return _finish(kernel, reward, utility, gamma, rho, threshold, seed, meta)


def n_chain(n=40, seed=0, slip=0.1, gamma=DEFAULT_GAMMA, threshold=None):
    """Chain of ``n`` nodes with actions LEFT and RIGHT.

    With probability ``slip`` the move goes the other way. A left move pays
    (reward, utility) = (1, 0), a right move pays (0, 2), and arriving at the
    last node adds a reward bonus of 40. A right move from the last node
    restarts at node 0. ``seed`` is recorded but the chain is deterministic.
    """
    if n < 2:
        raise ValidationError("n_chain needs n >= 2")
    if not 0.0 <= slip <= 0.5:
        raise ValidationError("slip must be in [0, 0.5]")
    kernel = np.zeros((n, 2, n))
    raw_r = np.zeros((n, 2))
    raw_c = np.zeros((n, 2))
    for s in range(n):
        for a in range(2):
            for direction, prob in ((a, 1.0 - slip), (1 - a, slip)):
                if prob == 0.0:
                    continue
                if direction == 0:
                    nxt, r, c = max(s - 1, 0), 1.0, 0.0
                else:
                    nxt = 0 if s == n - 1 else s + 1
                    r, c = (40.0 if nxt == n - 1 else 0.0), 2.0
                kernel[s, a, nxt] += prob
                raw_r[s, a] += prob * r
                raw_c[s, a] += prob * c
    rho = np.zeros(n)
    rho[0] = 1.0
    meta = {"kind": "n_chain", "n": n, "slip": slip, "seed": seed,
            "rescale": {"reward": [0.0, 40.0], "utility": [0.0, 2.0]}}
    return _finish(kernel, raw_r / 40.0, raw_c / 2.0, gamma, rho, threshold, seed, meta)


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    threshold: Optional[float] = None
    sn: int = 20
    an: int = 10
    size: int = 4
    n: int = 40
    slip: float = 0.1

    def to_dict(self):
        return asdict(self)


def make_env(spec):
    """Build the :class:`TabularCMDP` described by an :class:`EnvSpec`."""
    common = {"gamma": spec.gamma, "threshold": spec.threshold}
    if spec.kind == "garnet":
        return garnet(spec.sn, spec.an, spec.seed, **common)
    if spec.kind == "frozen_lake":
        return frozen_lake(spec.size, spec.seed, **common)
    if spec.kind == "taxi":
        return taxi(spec.seed, **common)
    if spec.kind == "n_chain":
        return n_chain(spec.n, spec.seed, spec.slip, **common)
    raise ValidationError(f"unknown environment kind {spec.kind!r}")
