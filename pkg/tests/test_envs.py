import numpy as np
import pytest

from robust_crl import EnvSpec, ValidationError, frozen_lake, garnet, make_env, n_chain, robust_threshold, taxi
from robust_crl.envs import taxi_decode, taxi_encode

# sha256 of the canonical JSON; any change to a generator must update these on purpose
GOLDEN = {
    "garnet_2_1_0": "1149d4f8ec0f04dd6c1ced02a95c8a6df320a3e2e01c2b8d4f511f478bc6327e",
    "frozen_lake_4": "9ecec4638285709fc24e3467015dc9fc455d7b1573eb029dc4046a47687e47cd",
    "taxi": "17cd9b5a6d4d37f7bacb7df982767e5e9e5a8b45412b6dbced8b64db444183c9",
    "n_chain_5": "4556c1d770b3055d14e71d5f40f2fbb611773a722299098e5b650ff9da68e425",
    "garnet_20_10_7": "5b25d9ce3c25514bd56c31f418ae768e3fafb4b9050a2ab139b088160a667a5f",
}


@pytest.mark.parametrize("name, build", [
    ("garnet_2_1_0", lambda: garnet(2, 1, 0)),
    ("frozen_lake_4", lambda: frozen_lake(4)),
    ("taxi", lambda: taxi()),
    ("n_chain_5", lambda: n_chain(5)),
    ("garnet_20_10_7", lambda: garnet(20, 10, 7)),
])
def test_golden_digests(name, build):
    assert build().digest() == GOLDEN[name]


def test_garnet_is_seeded_and_sized():
    a, b, c = garnet(6, 4, 1), garnet(6, 4, 1), garnet(6, 4, 2)
    assert a.digest() == b.digest() != c.digest()
    assert a.kernel.shape == (6, 4, 6)
    assert 0 < a.threshold < 1 / (1 - a.gamma)


def test_frozen_lake_holes_and_goal():
    m = frozen_lake(4)
    grid = "SFFFFHFHFFFHHFFG"
    holes = [i for i, ch in enumerate(grid) if ch == "H"]
    for h in holes:
        np.testing.assert_array_equal(m.utility[h], 0.0)
        np.testing.assert_allclose(m.kernel[h, :, 0], 1.0)
    np.testing.assert_allclose(m.kernel[15, :, 0], 1.0)
    assert m.utility.max() == 1.0
    assert m.rho[0] == 1.0


def test_taxi_layout():
    m = taxi()
    assert (m.n_states, m.n_actions) == (500, 6)
    for s in (0, 137, 499):
        assert taxi_encode(*taxi_decode(s)) == s
    # passengers start at a depot that is not their destination, never in the taxi
    for s in np.flatnonzero(m.rho):
        _, _, passenger, dest = taxi_decode(s)
        assert passenger < 4 and passenger != dest
    assert np.count_nonzero(m.rho) == 300


def test_n_chain_dynamics():
    m = n_chain(5, slip=0.1)
    lo, hi = m.meta["rescale"]["reward"]
    assert (lo, hi) == (0.0, 40.0)
    np.testing.assert_allclose(m.kernel[2, 0], [0, 0.9, 0, 0.1, 0])
    np.testing.assert_allclose(m.kernel[2, 1], [0, 0.1, 0, 0.9, 0])
    # reaching the last node pays the large reward; expected values fold in the slip
    np.testing.assert_allclose(m.reward[3] * 40, [0.9 * 1 + 0.1 * 40, 0.1 * 1 + 0.9 * 40])
    np.testing.assert_allclose(m.utility[0] * 2, [0.1 * 2, 0.9 * 2])


def test_env_spec_roundtrip():
    spec = EnvSpec(kind="garnet", seed=3, sn=4, an=2)
    assert make_env(spec).digest() == garnet(4, 2, 3).digest()
    assert spec.to_dict()["kind"] == "garnet"
    with pytest.raises(ValidationError):
        make_env(EnvSpec(kind="maze"))


def test_explicit_threshold_and_robust_calibration():
    m = garnet(5, 3, 0, threshold=2.5)
    assert m.threshold == 2.5
    b = robust_threshold(m, 0.2)
    from robust_crl import ContaminationSet
    from robust_crl.robust import robust_optimal_value
    v_best, _ = robust_optimal_value(ContaminationSet.around(m, 0.2), m, "utility")
    assert 0 < b <= m.rho @ v_best
