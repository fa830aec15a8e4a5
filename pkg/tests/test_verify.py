import numpy as np

from robust_crl import TabularCMDP, garnet
from robust_crl.verify import run_suite


def test_clean_instance_passes_everything():
    res = run_suite(garnet(4, 3, 0), n_pairs=20)
    assert all(r.passed for r in res), [r.to_dict() for r in res if not r.passed]
    assert {r.name for r in res} >= {"contraction", "gradient_finite_difference", "vertex_optimality"}


def test_broken_kernel_reports_row_and_skips_numeric_checks():
    m = garnet(4, 3, 0)
    kernel = np.array(m.kernel)
    kernel[2, 1, 0] += 0.05
    bad = TabularCMDP(kernel, m.reward, m.utilities, m.gamma, m.rho, m.thresholds, validate=False)
    res = run_suite(bad)
    first = res[0]
    assert not first.passed and first.counterexample["state"] == 2 and first.counterexample["action"] == 1
    numeric = [r for r in res if r.skipped]
    assert numeric and all(not r.passed for r in numeric)


def test_out_of_range_reward_is_located():
    m = garnet(3, 2, 1)
    reward = np.array(m.reward)
    reward[1, 0] = 1.5
    bad = TabularCMDP(m.kernel, reward, m.utilities, m.gamma, m.rho, m.thresholds, validate=False)
    check = {r.name: r for r in run_suite(bad)}["reward_range"]
    assert not check.passed and check.counterexample == {"state": 1, "action": 0, "value": 1.5}


def test_large_instance_skips_gradient_check():
    res = {r.name: r for r in run_suite(garnet(20, 4, 0), n_pairs=5)}
    assert res["gradient_finite_difference"].skipped and res["gradient_finite_difference"].passed
