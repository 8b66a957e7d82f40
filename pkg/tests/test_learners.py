import math

import numpy as np
import pytest

from aela_marl import autodiff as ad
from aela_marl.aela import batch_total_entropy
from aela_marl.diagnostics import qmix_monotonicity
from aela_marl.learners import (
    AgentNetwork,
    Episode,
    Learner,
    NumericDivergence,
    QMixer,
    ReplayBuffer,
    TrainerConfig,
    agent_q,
    build_inputs,
    epsilon_at,
    epsilon_greedy,
    qmix_mix,
    sync_targets,
    td_update,
    vdn_mix,
)


def make_episode(length, n_agents=2, obs_dim=3, n_actions=4, state_dim=5, seed=0, terminal=True, reward=None):
    rng = np.random.default_rng(seed)
    term = np.zeros(length, dtype=bool)
    if length:
        term[-1] = terminal
    return Episode(
        obs=rng.normal(size=(length + 1, n_agents, obs_dim)),
        state=rng.normal(size=(length + 1, state_dim)),
        actions=rng.integers(0, n_actions, size=(length, n_agents)),
        legal=np.ones((length + 1, n_agents, n_actions), dtype=bool),
        reward=rng.normal(size=length) if reward is None else np.asarray(reward, dtype=float),
        terminal=term,
    )


def make_learner(mixer="vdn", seed=0, **kw):
    cfg = TrainerConfig(mixer=mixer, hidden_dim=8, mixing_embed_dim=4, hypernet_embed=6, **kw)
    return Learner(2, 4, 3, 5, cfg, np.random.default_rng(seed))


def zero_params(params):
    for p in params:
        p.data[...] = 0.0


# ------------------------------------------------------------------- agents


def test_agent_zero_weights_give_output_bias():
    net = AgentNetwork(np.random.default_rng(0), 3 + 4 + 2, 4, 8)
    zero_params(net.params())
    net.fc2.b.data[:] = [0.5, -1.0, 2.0, 0.0]
    q, h = agent_q(net, np.random.default_rng(1).normal(size=(2, 3)), np.array([-1, 2]), np.zeros((2, 8)))
    np.testing.assert_array_equal(q, np.tile([0.5, -1.0, 2.0, 0.0], (2, 1)))
    assert h.shape == (2, 8)


def test_agent_q_deterministic():
    net = AgentNetwork(np.random.default_rng(0), 9, 4, 8)
    obs = np.random.default_rng(1).normal(size=(2, 3))
    h0 = np.random.default_rng(2).normal(size=(2, 8))
    a = agent_q(net, obs, np.array([0, 1]), h0)
    b = agent_q(net, obs, np.array([0, 1]), h0)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def _scalar_gru(x, h, w_ih, b_ih, w_hh, b_hh):
    """Unit-by-unit reference cell written from the gate equations."""
    H = len(h)
    out = []
    for j in range(H):
        def pre(col, src, w, b):
            return sum(src[k] * w[k][col] for k in range(len(src))) + b[col]

        r = 1 / (1 + math.exp(-(pre(j, x, w_ih, b_ih) + pre(j, h, w_hh, b_hh))))
        z = 1 / (1 + math.exp(-(pre(H + j, x, w_ih, b_ih) + pre(H + j, h, w_hh, b_hh))))
        n = math.tanh(pre(2 * H + j, x, w_ih, b_ih) + r * pre(2 * H + j, h, w_hh, b_hh))
        out.append((1 - z) * n + z * h[j])
    return out


def test_gru_step_matches_scalar_reference():
    rng = np.random.default_rng(3)
    net = AgentNetwork(rng, 5, 3, 4)
    x = rng.normal(size=5)
    h = rng.normal(size=4)
    _, h_new = net.forward(x[None], h[None])
    hidden_in = np.maximum(x @ net.fc1.w.data + net.fc1.b.data, 0.0)
    ref = _scalar_gru(hidden_in.tolist(), h.tolist(), net.w_ih.data.tolist(), net.b_ih.data.tolist(), net.w_hh.data.tolist(), net.b_hh.data.tolist())
    np.testing.assert_allclose(h_new.data[0], ref, rtol=0, atol=1e-14)


def test_agent_shape_errors():
    net = AgentNetwork(np.random.default_rng(0), 9, 4, 8)
    with pytest.raises(ad.ShapeError):
        net.forward(np.zeros((2, 8)), np.zeros((2, 8)))
    with pytest.raises(ad.ShapeError):
        net.forward(np.zeros((2, 9)), np.zeros((2, 7)))


def test_build_inputs_layout():
    obs = np.arange(6.0).reshape(2, 3)
    x = build_inputs(obs, np.array([-1, 2]), 4)
    np.testing.assert_array_equal(x[0], [0, 1, 2, 0, 0, 0, 0, 1, 0])
    np.testing.assert_array_equal(x[1], [3, 4, 5, 0, 0, 1, 0, 0, 1])


# ------------------------------------------------------------------- mixers


def test_vdn_mix():
    assert vdn_mix([2.0]) == 2.0
    assert vdn_mix([1, 2, 3]) == 6.0
    learner = make_learner("vdn")
    q = ad.Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    with ad.Tape() as tape:
        tot = ad.masked_sum(learner.mixer(q))
    (g,) = tape.backward(tot, [q])
    np.testing.assert_array_equal(g, [[1.0, 1.0]])


@pytest.mark.parametrize("layers", [1, 2])
def test_qmix_degenerate_weights_leave_state_bias(layers):
    rng = np.random.default_rng(0)
    mixer = QMixer(rng, 3, 4, 5, layers, 6)
    for layer in mixer.hyper_w1 + mixer.hyper_w2:
        zero_params(layer.params())
    state = rng.normal(size=4)
    v = np.maximum(state @ mixer.v1.w.data + mixer.v1.b.data, 0.0) @ mixer.v2.w.data + mixer.v2.b.data
    for q in ([0, 0, 0], [5, -3, 2]):
        assert qmix_mix(mixer, q, state) == pytest.approx(v[0], abs=1e-14)
    zero_params([mixer.v1.w, mixer.v1.b, mixer.v2.w])
    mixer.v2.b.data[:] = 1.25
    assert qmix_mix(mixer, [4, 4, 4], state) == 1.25


def test_qmix_monotone_by_finite_differences():
    check = qmix_monotonicity(n_points=1000, seed=11)
    assert check.passed, check


def test_qmix_doubling_a_positive_q_never_decreases_total():
    rng = np.random.default_rng(1)
    for _ in range(200):
        mixer = QMixer(rng, 3, 4, 4, int(rng.integers(1, 3)))
        q = np.abs(rng.normal(size=3))
        s = rng.normal(size=4)
        i = int(rng.integers(3))
        q2 = q.copy()
        q2[i] *= 2
        assert qmix_mix(mixer, q2, s) >= qmix_mix(mixer, q, s)


def test_qmix_shape_errors():
    mixer = QMixer(np.random.default_rng(0), 3, 4)
    with pytest.raises(ad.ShapeError):
        mixer(np.zeros((1, 3)), np.zeros((1, 5)))
    with pytest.raises(ad.ShapeError):
        mixer(np.zeros((1, 2)), np.zeros((1, 4)))


# ------------------------------------------------------------- exploration


def test_greedy_picks_argmax():
    assert epsilon_greedy(np.array([1.0, 3.0, 2.0]), 0.0, np.ones(3, bool), np.random.default_rng(0)) == 1


def test_greedy_respects_mask():
    assert epsilon_greedy(np.array([9.0, 0.0]), 0.0, np.array([False, True]), np.random.default_rng(0)) == 1


def test_greedy_ties_lowest_index():
    assert epsilon_greedy(np.array([0.0, 2.0, 2.0]), 0.0, np.ones(3, bool), np.random.default_rng(0)) == 1


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        epsilon_greedy(np.zeros(3), 0.5, np.zeros(3, bool), np.random.default_rng(0))


def test_full_exploration_is_uniform_over_legal():
    rng = np.random.default_rng(42)
    legal = np.array([True, False, True, True, False])
    n = 100_000
    draws = np.array([epsilon_greedy(np.arange(5.0), 1.0, legal, rng) for _ in range(n)])
    counts = np.bincount(draws, minlength=5)
    assert counts[1] == counts[4] == 0
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    for k in (0, 2, 3):
        assert abs(counts[k] - n * p) <= 3 * sigma


def test_epsilon_schedule():
    cfg = TrainerConfig(anneal_steps=1000)
    assert epsilon_at(0, cfg) == 1.0
    assert epsilon_at(500, cfg) == pytest.approx(0.525)
    assert epsilon_at(1000, cfg) == 0.05
    assert epsilon_at(10**6, cfg) == 0.05
    ts = np.arange(0, 2000, 7)
    eps = [epsilon_at(int(t), cfg) for t in ts]
    assert all(0.0 <= e <= 1.0 for e in eps)
    assert all(a >= b for a, b in zip(eps, eps[1:]))


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(target_update_interval=0)
    with pytest.raises(ValueError):
        TrainerConfig(epsilon_start=1.5)
    assert TrainerConfig(batch_size=8).learn_start == 8


# ------------------------------------------------------------------ replay


def test_store_pads_with_mask():
    buf = ReplayBuffer(10, 100)
    buf.store_episode(make_episode(10))
    batch = buf.sample_batch(1, np.random.default_rng(0))
    assert batch.filled.shape == (1, 100)
    assert batch.filled.sum() == 10 and not batch.filled[0, 10:].any()
    assert batch.obs.shape == (1, 101, 2, 3)


def test_capacity_evicts_oldest():
    buf = ReplayBuffer(5000, 3)
    for k in range(5001):
        buf.store_episode(make_episode(1, seed=0, reward=[float(k)]))
    assert len(buf) == 5000
    assert buf.episodes[0][1].reward[0] == 1.0
    assert buf.episodes[-1][1].reward[0] == 5000.0


def test_sample_ids_distinct_and_underfill_rejected():
    buf = ReplayBuffer(100, 5)
    for k in range(40):
        buf.store_episode(make_episode(3, seed=k))
    batch = buf.sample_batch(32, np.random.default_rng(1))
    assert len(set(batch.ids.tolist())) == 32
    with pytest.raises(ValueError):
        buf.sample_batch(41, np.random.default_rng(1))


def test_store_rejects_long_or_empty():
    buf = ReplayBuffer(4, 5)
    with pytest.raises(ValueError):
        buf.store_episode(make_episode(6))
    with pytest.raises(ValueError):
        buf.store_episode(make_episode(0, terminal=False))


# -------------------------------------------------------------- TD updates


def _one_step_batch(terminal, reward=1.5, action=(2, 0)):
    ep = make_episode(1, terminal=terminal, reward=[reward])
    ep.actions[0] = action
    return ReplayBuffer(1, 4).pad([ep])


def _constant_q_learner(values, **kw):
    learner = make_learner("vdn", gamma=0.9, grad_norm_clip=0.0, **kw)
    for p in learner.params + learner.target_agent.params():
        p.data[...] = 0.0
    learner.agent.fc2.b.data[:] = values
    learner.target_agent.fc2.b.data[:] = values
    return learner


def test_terminal_step_target_is_reward():
    learner = _constant_q_learner([0.0, 1.0, 3.0, -1.0])
    targets = learner.td_targets(_one_step_batch(True).trimmed())
    assert targets[0, 0] == 1.5


def test_one_step_loss_by_hand():
    learner = _constant_q_learner([0.0, 1.0, 3.0, -1.0])
    # Q_tot = q[2] + q[0] = 3; target = 1.5; loss = (3 - 1.5)^2
    assert learner.td_update(_one_step_batch(True)) == pytest.approx(2.25, abs=1e-14)


def test_truncated_step_bootstraps_from_target():
    q = [0.0, 1.0, 3.0, -1.0]
    learner = _constant_q_learner(q)
    cut = learner.td_targets(_one_step_batch(False).trimmed())[0, 0]
    end = learner.td_targets(_one_step_batch(True).trimmed())[0, 0]
    # two agents each take max 3 under the target net
    assert cut - end == pytest.approx(0.9 * 6.0, abs=1e-14)
    loss = _constant_q_learner(q).td_update(_one_step_batch(False))
    assert loss == pytest.approx((3.0 - (1.5 + 5.4)) ** 2, abs=1e-12)


def test_empty_batch_rejected():
    learner = make_learner()
    batch = ReplayBuffer(1, 4).pad([make_episode(2)])
    empty = type(batch)(*(getattr(batch, f)[:0] for f in ("obs", "state", "actions", "legal", "reward", "terminal", "filled", "ids")))
    with pytest.raises(ValueError):
        learner.td_update(empty)


def test_nan_loss_aborts():
    learner = make_learner()
    ep = make_episode(2)
    ep.reward[0] = np.nan
    with pytest.raises(NumericDivergence):
        learner.td_update(ReplayBuffer(1, 4).pad([ep]))


@pytest.mark.parametrize("mixer", ["vdn", "qmix"])
def test_padding_never_affects_loss_gradients_or_entropy(mixer):
    eps = [make_episode(3, seed=1), make_episode(5, seed=2)]
    batch = ReplayBuffer(2, 8).pad(eps)
    noisy = ReplayBuffer(2, 8).pad(eps)
    rng = np.random.default_rng(9)
    pad = ~noisy.filled
    noisy.reward[pad] = rng.normal(size=pad.sum()) * 100
    noisy.actions[pad] = rng.integers(0, 4, size=(pad.sum(), 2))
    noisy.terminal[pad] = True
    # observations after the last filled transition are never used as inputs
    for b, ep in enumerate(eps):
        noisy.obs[b, ep.length + 1 :] = rng.normal(size=noisy.obs[b, ep.length + 1 :].shape)
        noisy.state[b, ep.length + 1 :] = rng.normal(size=noisy.state[b, ep.length + 1 :].shape)
    results = []
    for data in (batch, noisy):
        learner = make_learner(mixer, seed=3)
        loss = learner.td_update(data)
        h = batch_total_entropy(learner.last_q, learner.last_filled)
        results.append((loss, h, [p.data.copy() for p in learner.params]))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]
    for a, b in zip(results[0][2], results[1][2]):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mixer", ["vdn", "qmix"])
def test_update_changes_params_and_is_deterministic(mixer):
    batch = ReplayBuffer(3, 6).pad([make_episode(n, seed=n) for n in (2, 4, 6)])
    a, b = make_learner(mixer, seed=5), make_learner(mixer, seed=5)
    before = a.checksum()
    la, lb = td_update(a, batch), td_update(b, batch)
    assert la == lb and a.checksum() == b.checksum() != before


def test_targets_only_move_at_sync():
    learner = make_learner("qmix")
    init = [p.data.copy() for p in learner.target_agent.params() + learner.target_mixer.params()]
    online0 = [p.data.copy() for p in learner.params]
    for p, q in zip(init, online0):
        np.testing.assert_array_equal(p, q)
    batch = ReplayBuffer(2, 6).pad([make_episode(3, seed=1), make_episode(6, seed=2)])
    for _ in range(3):
        learner.td_update(batch)
    for p, q in zip(init, learner.target_agent.params() + learner.target_mixer.params()):
        np.testing.assert_array_equal(p, q.data)
    sync_targets(learner)
    obs = np.random.default_rng(0).normal(size=(2, 3))
    h = np.zeros((2, 8))
    qa, _ = agent_q(learner.agent, obs, np.array([0, 1]), h)
    qt, _ = agent_q(learner.target_agent, obs, np.array([0, 1]), h)
    np.testing.assert_array_equal(qa, qt)
    s = np.random.default_rng(1).normal(size=5)
    assert qmix_mix(learner.mixer, [1.0, -1.0], s) == qmix_mix(learner.target_mixer, [1.0, -1.0], s)
