import numpy as np
import pytest

from aela_marl import theory as th
from aela_marl.theory import ChainModel


def model_from_ps(ps, **kw):
    """Chain whose secure curve is exactly ``ps`` (non-increasing, ps[0] <= 1)."""
    ps = np.asarray(ps, dtype=float)
    prev = np.concatenate([[1.0], ps[:-1]])
    return ChainModel(horizon=len(ps), p_dead=1.0 - ps / prev, **kw)


# ----------------------------------------------------------- secure_prob


def test_secure_prob_no_dead_ends():
    m = ChainModel(5, np.zeros(5))
    assert [th.secure_prob(m, l) for l in range(1, 6)] == [1.0] * 5


def test_secure_prob_constant_half():
    assert th.secure_prob(ChainModel(3, [0.5] * 3), 2) == 0.25


def test_secure_prob_two_steps():
    assert th.secure_prob(ChainModel(2, [0.1, 0.2]), 2) == pytest.approx(0.72, abs=1e-15)


def test_secure_prob_range():
    m = ChainModel(2, [0.1, 0.2])
    for bad in (0, 3):
        with pytest.raises(ValueError):
            th.secure_prob(m, bad)


def test_model_validation_and_immutability():
    with pytest.raises(ValueError):
        ChainModel(2, [0.1])
    with pytest.raises(ValueError):
        ChainModel(1, [1.2])
    with pytest.raises(ValueError):
        ChainModel(1, [0.2], p_goal=2.0)
    m = ChainModel(2, [0.1, 0.2])
    with pytest.raises(ValueError):
        m.p_dead[0] = 0.5


# ------------------------------------------------------- expected visits


def test_expected_visits_all_secure():
    m = ChainModel(4, np.zeros(4))
    for e_l in range(1, 5):
        assert th.expected_secure_visits(m, e_l, 100) == 100


def test_expected_visits_examples():
    m = model_from_ps([1.0, 0.5])
    assert th.expected_secure_visits(m, 2, 100) == 75
    assert th.expected_secure_visits(m, 1, 100) == 100


def test_visit_stats_bookkeeping():
    m = model_from_ps([0.9, 0.5, 0.2])
    s = th.visit_stats(m, 3, 300)
    assert s.e_n == 100
    assert s.n_s + s.n_d == s.n_total
    assert s.p_d_agg == pytest.approx(1 - s.n_s / 300)


def test_delta_ns_constant_curve_is_zero():
    m = ChainModel(6, np.zeros(6))
    assert all(th.delta_Ns(m, e, 50) == 0 for e in range(1, 6))


def test_delta_ns_example():
    assert th.delta_Ns(model_from_ps([1.0, 0.5]), 1, 100) == -25


def test_delta_ns_matches_direct_difference_and_sign():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        m = th.random_model(rng, 30)
        n_total = float(rng.uniform(1, 10))
        for e in range(1, m.horizon):
            d = th.delta_Ns(m, e, n_total)
            direct = th.expected_secure_visits(m, e + 1, n_total) - th.expected_secure_visits(m, e, n_total)
            assert d <= 0
            assert abs(d - direct) <= 1e-12


def test_delta_ns_range():
    with pytest.raises(ValueError):
        th.delta_Ns(ChainModel(3, np.zeros(3)), 3, 10)


def test_aggregate_dead_prob_monotone():
    rng = np.random.default_rng(1)
    for _ in range(500):
        m = th.random_model(rng, 40)
        curve = th.aggregate_dead_prob_curve(m)
        assert np.all(np.diff(curve) >= 0)
        direct = [th.visit_stats(m, e, 1.0).p_d_agg for e in range(1, m.horizon + 1)]
        np.testing.assert_allclose(curve, direct, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- regret


def test_regret_examples():
    m1 = ChainModel(1, [0.0], r_goal=10)
    assert th.regret(m1, 1, 0.0, 1.0) == 0
    assert th.regret(m1, 1, 0.0, 0.0) == 10
    m2 = ChainModel(2, [0.0, 0.0], r_goal=10)
    assert th.regret(m2, 2, 0.5, 0.5) == 2.5


def test_regret_first_bracket_uses_optimal_rewards():
    m = ChainModel(2, [0, 0], r_goal=10, step_rewards=[1, 1], optimal_rewards=[2, 3])
    base = ChainModel(2, [0, 0], r_goal=10, step_rewards=[1, 1])
    assert th.regret(m, 2, 0.3, 0.4) - th.regret(base, 2, 0.3, 0.4) == pytest.approx(3.0)


def test_regret_derivative_examples():
    m = ChainModel(2, [0.0, 0.0], r_goal=10)
    assert th.regret_derivative(ChainModel(1, [0.0]), 1, 0.3, 0.5) == 0
    for p_d in (0.0, 0.2, 0.9, 1.0):
        assert th.regret_derivative(m, 2, p_d, 0.5) == 5


def test_regret_derivative_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(300):
        m = th.random_model(rng, 30, assumption=True)
        p_d = float(rng.uniform(0.01, 0.99))
        d = th.regret_derivative(m, m.horizon, p_d, m.p_goal)
        fd = (th.regret(m, m.horizon, p_d + h, m.p_goal) - th.regret(m, m.horizon, p_d - h, m.p_goal)) / (2 * h)
        assert abs(d - fd) <= 1e-8 * max(1.0, abs(fd))
        assert d > 0


def test_regret_rejects_bad_probabilities():
    m = ChainModel(1, [0.0])
    with pytest.raises(ValueError):
        th.regret(m, 1, 1.5, 0.1)
    with pytest.raises(ValueError):
        th.regret_derivative(m, 1, 0.1, -0.1)


# ------------------------------------------------------------ assumption


@pytest.mark.parametrize(
    "rewards,r_g,expected",
    [([0, 0, 0], 10, True), ([6, 5], 10, False), ([-1, 4], 5, True), ([3, -10, 9], 9, False), ([], 1, True)],
)
def test_assumption_check(rewards, r_g, expected):
    assert th.assumption_check(rewards, r_g) is expected


def test_assumption_check_against_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(500):
        r = rng.normal(size=int(rng.integers(1, 12)))
        r_g = float(rng.uniform(-1, 3))
        brute = max(r[i : j + 1].sum() for i in range(len(r)) for j in range(i, len(r))) < r_g
        assert th.assumption_check(r, r_g) == brute


def test_random_model_assumption_flag():
    rng = np.random.default_rng(4)
    for _ in range(200):
        assert th.random_model(rng, assumption=True).assumption_holds
        assert not th.random_model(rng, assumption=False).assumption_holds


# ------------------------------------------------------------ Monte Carlo


def test_mc_oracle_no_dead_ends_exact():
    s = th.mc_visit_oracle(ChainModel(5, np.zeros(5)), 5, 1000, np.random.default_rng(0))
    assert s.n_s == s.n_total == 5000
    assert np.all(s.p_s == 1.0)


def test_mc_oracle_agrees_with_closed_form():
    rng = np.random.default_rng(5)
    m = ChainModel(8, [0.05, 0.1, 0.0, 0.2, 0.1, 0.3, 0.05, 0.1])
    s = th.mc_visit_oracle(m, 8, 100_000, rng)
    exact = th.expected_secure_visits(m, 8, s.n_total)
    assert abs(s.n_s - exact) <= 3 * s.n_s_stderr
    assert np.all(np.diff(s.p_s) <= 3 * np.sqrt(0.25 / 100_000))


def test_mc_oracle_validation():
    with pytest.raises(ValueError):
        th.mc_visit_oracle(ChainModel(2, [0, 0]), 2, 0, np.random.default_rng(0))


# ---------------------------------------------------------------- suite


def test_quick_suite_passes_and_csv():
    checks = th.run_suite(quick=True)
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]
    text = th.checks_to_csv(checks)
    lines = text.strip().splitlines()
    assert lines[0] == "name,computed,bound,pass"
    assert len(lines) == len(checks) + 1
