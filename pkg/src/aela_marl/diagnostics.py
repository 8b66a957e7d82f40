"""Gradient and invariant self-checks behind the ``check`` subcommand."""

from __future__ import annotations

import math
import time

import numpy as np

from . import autodiff as ad
from .aela import AelaController, action_entropy, softmax_policy
from .learners import AgentNetwork, Episode, QMixer, ReplayBuffer, build_inputs
from .theory import Check

GRAD_TOL = 1e-4


def _agent_instance(rng: np.random.Generator):
    n_agents = int(rng.integers(1, 4))
    n_actions = int(rng.integers(2, 6))
    obs_dim = int(rng.integers(1, 6))
    hidden = int(rng.integers(2, 9))
    steps = int(rng.integers(1, 4))
    batch = int(rng.integers(1, 3))
    net = AgentNetwork(rng, obs_dim + n_actions + n_agents, n_actions, hidden)
    obs = rng.normal(size=(steps, batch, n_agents, obs_dim))
    prev = rng.integers(-1, n_actions, size=(steps, batch, n_agents))
    x = build_inputs(obs, prev, n_actions).reshape(steps, batch * n_agents, -1)
    h0 = rng.normal(scale=0.5, size=(batch * n_agents, hidden))
    coef = rng.normal(size=(steps, batch * n_agents, n_actions))

    def loss(_params):
        seq = net.forward_sequence(x, h0)
        q1, _ = net.forward(x[0], h0)
        return ad.masked_sum(seq * coef) + ad.masked_sum(q1 * coef[0])

    return loss, net.params()


def _qmix_instance(rng: np.random.Generator):
    n_agents = int(rng.integers(1, 5))
    state_dim = int(rng.integers(1, 6))
    embed = int(rng.integers(2, 7))
    layers = int(rng.integers(1, 3))
    mixer = QMixer(rng, n_agents, state_dim, embed, layers, int(rng.integers(2, 7)))
    n = int(rng.integers(1, 5))
    chosen = ad.Tensor(rng.normal(size=(n, n_agents)), requires_grad=True, name="chosen_q")
    states = rng.normal(size=(n, state_dim))
    coef = rng.normal(size=n)

    def loss(_params):
        return ad.masked_sum(mixer(chosen, states) * coef)

    return loss, mixer.params() + [chosen]


def gradient_suite(n_instances: int = 100, seed: int = 0) -> list[Check]:
    """Finite-difference checks of the agent network (with GRU) and the QMIX mixer."""
    rng = np.random.default_rng(seed)
    out = []
    for name, make in (("grad_agent_network", _agent_instance), ("grad_qmix_mixer", _qmix_instance)):
        start = time.perf_counter()
        worst = 0.0
        for _ in range(n_instances):
            loss, params = make(rng)
            worst = max(worst, ad.grad_check(loss, params))
        out.append(Check(name, worst, GRAD_TOL, worst <= GRAD_TOL, time.perf_counter() - start, f"{n_instances} instances"))
    return out


def qmix_monotonicity(n_points: int = 1000, seed: int = 1, h: float = 1e-6) -> Check:
    """Smallest central-difference dQ_tot/dQ_i over random mixers, states and q's."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = math.inf
    for _ in range(n_points):
        n_agents = int(rng.integers(1, 6))
        mixer = QMixer(rng, n_agents, int(rng.integers(1, 8)), int(rng.integers(2, 9)), int(rng.integers(1, 3)))
        base = rng.normal(scale=3.0, size=n_agents)
        step = h * np.eye(n_agents)
        q = np.concatenate([base + step, base - step])
        state = np.broadcast_to(rng.normal(scale=2.0, size=mixer.state_dim), (2 * n_agents, mixer.state_dim))
        tot = mixer(q, state).data
        fd = (tot[:n_agents] - tot[n_agents:]) / (2 * h)
        worst = min(worst, float(fd.min()))
    return Check("qmix_monotone", worst, -1e-9, worst >= -1e-9, time.perf_counter() - start, f"{n_points} points")


def controller_invariants(n_runs: int = 200, seed: int = 2) -> Check:
    """E_L never decreases, never passes E_max, and moves by at most one per fit."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    bad = 0
    for _ in range(n_runs):
        e_max = int(rng.integers(2, 60))
        e_l0 = int(rng.integers(1, e_max + 1))
        w = int(rng.integers(2, 8))
        ctrl = AelaController(e_l0, e_max, w)
        prev = ctrl.e_l
        for _ in range(int(rng.integers(1, 200))):
            q = rng.normal(scale=rng.uniform(0.1, 5), size=(2, 3, 2, 4))
            fits_before = ctrl.window.fits_done
            ctrl.observe(q, np.ones((2, 3), dtype=bool))
            step = ctrl.e_l - prev
            allowed = 1 if ctrl.window.fits_done > fits_before else 0
            if not (0 <= step <= allowed and ctrl.e_l <= e_max):
                bad += 1
            prev = ctrl.e_l
    return Check("controller_monotone", bad, 0, bad == 0, time.perf_counter() - start)


def entropy_bounds(n_instances: int = 500, seed: int = 3) -> Check:
    """0 <= H(softmax(q / tau)) <= log(A)."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(n_instances):
        a = int(rng.integers(1, 10))
        q = rng.normal(scale=rng.uniform(0.01, 50), size=(5, a))
        h = np.asarray(action_entropy(softmax_policy(q, rng.uniform(0.05, 5))))
        worst = max(worst, float(np.max(-h)), float(np.max(h - math.log(a))))
    return Check("entropy_bounds", worst, 1e-12, worst <= 1e-12, time.perf_counter() - start)


def buffer_invariants(seed: int = 4) -> Check:
    """FIFO eviction keeps exactly the newest ``capacity`` episodes."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    bad = 0
    for _ in range(50):
        cap = int(rng.integers(1, 10))
        buf = ReplayBuffer(cap, 5)
        n = int(rng.integers(1, 30))
        for k in range(n):
            ln = int(rng.integers(1, 6))
            buf.store_episode(
                Episode(
                    obs=np.zeros((ln + 1, 1, 1)),
                    state=np.zeros((ln + 1, 1)),
                    actions=np.zeros((ln, 1), dtype=np.int64),
                    legal=np.ones((ln + 1, 1, 2), dtype=bool),
                    reward=np.full(ln, float(k)),
                    terminal=np.zeros(ln, dtype=bool),
                )
            )
        kept = [float(ep.reward[0]) for _, ep in buf.episodes]
        if len(buf) != min(cap, n) or kept != [float(k) for k in range(max(0, n - cap), n)]:
            bad += 1
    return Check("buffer_fifo", bad, 0, bad == 0, time.perf_counter() - start)


def run_checks(seed: int = 0, n_grad: int = 100) -> list[Check]:
    return gradient_suite(n_grad, seed) + [
        qmix_monotonicity(seed=seed + 1),
        controller_invariants(seed=seed + 2),
        entropy_bounds(seed=seed + 3),
        buffer_invariants(seed=seed + 4),
    ]
