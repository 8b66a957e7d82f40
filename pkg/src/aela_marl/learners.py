"""Recurrent agent Q-networks, VDN/QMIX mixers, episodic replay and TD training."""

from __future__ import annotations

import copy
import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, uniform_init


class NumericDivergence(FloatingPointError):
    pass


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    batch_size: int = 32
    target_update_interval: int = 200
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    anneal_steps: int = 50_000
    buffer_size: int = 5000
    learn_start: int | None = None  # None -> batch_size
    lr: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    grad_norm_clip: float = 10.0
    hidden_dim: int = 64
    mixer: str = "vdn"
    mixing_embed_dim: int = 32
    hypernet_layers: int = 1
    hypernet_embed: int = 64
    updates_per_episode: int = 1

    def __post_init__(self):
        if self.target_update_interval <= 0:
            raise ValueError("target_update_interval must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.epsilon_finish <= 1.0 and 0.0 <= self.epsilon_start <= 1.0):
            raise ValueError("epsilon values must lie in [0, 1]")
        if self.mixer not in ("vdn", "qmix"):
            raise ValueError(f"unknown mixer {self.mixer!r}")
        if self.hypernet_layers not in (1, 2):
            raise ValueError("hypernet_layers must be 1 or 2")
        if self.learn_start is None:
            self.learn_start = self.batch_size


def epsilon_at(t: int, cfg: TrainerConfig) -> float:
    """Linear anneal from ``epsilon_start`` to ``epsilon_finish``, flat afterwards."""
    if cfg.anneal_steps <= 0 or t >= cfg.anneal_steps:
        return cfg.epsilon_finish
    frac = t / cfg.anneal_steps
    return cfg.epsilon_start + frac * (cfg.epsilon_finish - cfg.epsilon_start)


# ------------------------------------------------------------------ networks


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, name: str):
        self.w = uniform_init(rng, n_in, (n_in, n_out), name=f"{name}.w")
        self.b = uniform_init(rng, n_in, (n_out,), name=f"{name}.b")

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class AgentNetwork:
    """FC -> ReLU -> GRU cell -> FC, parameters shared by all agents.

    The input row is ``[obs, one-hot last action, one-hot agent id]``.
    GRU gates follow the (r, z, n) layout:

        r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
        z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h
    """

    def __init__(self, rng: np.random.Generator, input_dim: int, n_actions: int, hidden_dim: int = 64):
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        H = hidden_dim
        self.fc1 = Linear(rng, input_dim, H, "fc1")
        self.w_ih = uniform_init(rng, H, (H, 3 * H), name="gru.w_ih")
        self.b_ih = uniform_init(rng, H, (3 * H,), name="gru.b_ih")
        self.w_hh = uniform_init(rng, H, (H, 3 * H), name="gru.w_hh")
        self.b_hh = uniform_init(rng, H, (3 * H,), name="gru.b_hh")
        self.fc2 = Linear(rng, H, n_actions, "fc2")

    def params(self) -> list[Tensor]:
        return self.fc1.params() + [self.w_ih, self.b_ih, self.w_hh, self.b_hh] + self.fc2.params()

    def init_hidden(self, n: int) -> Tensor:
        return Tensor(np.zeros((n, self.hidden_dim)))

    def _check(self, inputs: Tensor, hidden: Tensor) -> None:
        if inputs.shape[-1] != self.input_dim:
            raise ad.ShapeError(f"agent input has width {inputs.shape[-1]}, expected {self.input_dim}")
        if hidden.shape[-1] != self.hidden_dim:
            raise ad.ShapeError(f"hidden has width {hidden.shape[-1]}, expected {self.hidden_dim}")

    def forward(self, inputs, hidden):
        """One recurrent step on a (N, input_dim) block; returns (q, hidden)."""
        inputs, hidden = ad.as_tensor(inputs), ad.as_tensor(hidden)
        self._check(inputs, hidden)
        x = ad.relu(self.fc1(inputs))
        h = ad.gru_cell(x, hidden, self.w_ih, self.b_ih, self.w_hh, self.b_hh)
        return self.fc2(h), h

    def step(self, inputs: np.ndarray, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Array-only :meth:`forward` for acting."""
        x = np.maximum(inputs @ self.fc1.w.data + self.fc1.b.data, 0.0)
        h = ad.gru_step(x, hidden, self.w_ih.data, self.b_ih.data, self.w_hh.data, self.b_hh.data)
        return h @ self.fc2.w.data + self.fc2.b.data, h

    def forward_sequence(self, inputs, hidden):
        """Time-major unroll: (T, N, input_dim) -> q-values (T, N, n_actions)."""
        inputs, hidden = ad.as_tensor(inputs), ad.as_tensor(hidden)
        self._check(inputs, hidden)
        x = ad.relu(self.fc1(inputs))
        hs = ad.gru_sequence(x, hidden, self.w_ih, self.b_ih, self.w_hh, self.b_hh)
        return self.fc2(hs)


def build_inputs(obs: np.ndarray, last_actions: np.ndarray, n_actions: int) -> np.ndarray:
    """Rows ``[obs_i, onehot(a_prev_i), onehot(i)]`` for every agent.

    ``obs`` is (..., I, obs_dim); ``last_actions`` is (..., I) with -1 meaning
    "no previous action".
    """
    n_agents = obs.shape[-2]
    lead = obs.shape[:-2]
    last = (np.asarray(last_actions)[..., None] == np.arange(n_actions)).astype(np.float64)
    ids = np.broadcast_to(np.eye(n_agents), lead + (n_agents, n_agents))
    return np.concatenate([obs, last, ids], axis=-1)


def agent_q(net: AgentNetwork, obs, last_action, hidden) -> tuple[np.ndarray, np.ndarray]:
    """One step for all agents: obs (I, obs_dim), last_action (I,) with -1 = none."""
    return net.step(build_inputs(np.asarray(obs, dtype=float), last_action, net.n_actions), np.asarray(hidden, dtype=float))


class VDNMixer:
    def params(self) -> list[Tensor]:
        return []

    def __call__(self, chosen_q, states=None):
        return ad.masked_sum(chosen_q, axis=-1)


def vdn_mix(chosen_q) -> float:
    return float(np.sum(np.asarray(chosen_q, dtype=float)))


class QMixer:
    """Monotonic mixing network whose weights come from state hypernetworks.

    Mixing weights pass through abs() so dQ_tot/dQ_i >= 0 for every agent.
    """

    def __init__(self, rng, n_agents: int, state_dim: int, embed_dim: int = 32, hypernet_layers: int = 1, hypernet_embed: int = 64):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        E = embed_dim
        if hypernet_layers == 1:
            self.hyper_w1 = [Linear(rng, state_dim, E * n_agents, "hyper_w1")]
            self.hyper_w2 = [Linear(rng, state_dim, E, "hyper_w2")]
        else:
            self.hyper_w1 = [Linear(rng, state_dim, hypernet_embed, "hyper_w1.0"), Linear(rng, hypernet_embed, E * n_agents, "hyper_w1.1")]
            self.hyper_w2 = [Linear(rng, state_dim, hypernet_embed, "hyper_w2.0"), Linear(rng, hypernet_embed, E, "hyper_w2.1")]
        self.hyper_b1 = Linear(rng, state_dim, E, "hyper_b1")
        self.v1 = Linear(rng, state_dim, E, "v.0")
        self.v2 = Linear(rng, E, 1, "v.1")

    def params(self) -> list[Tensor]:
        ps: list[Tensor] = []
        for layer in self.hyper_w1 + self.hyper_w2 + [self.hyper_b1, self.v1, self.v2]:
            ps.extend(layer.params())
        return ps

    @staticmethod
    def _hyper(layers, s):
        x = layers[0](s)
        for layer in layers[1:]:
            x = layer(ad.elu(x))
        return x

    def __call__(self, chosen_q, states):
        """chosen_q: (N, I), states: (N, state_dim) -> (N,)."""
        chosen_q = ad.as_tensor(chosen_q)
        states = ad.as_tensor(states)
        if states.shape[-1] != self.state_dim:
            raise ad.ShapeError(f"state has width {states.shape[-1]}, expected {self.state_dim}")
        if chosen_q.shape[-1] != self.n_agents:
            raise ad.ShapeError(f"expected {self.n_agents} agent values, got {chosen_q.shape[-1]}")
        n = states.shape[0]
        E = self.embed_dim
        w1 = ad.absolute(self._hyper(self.hyper_w1, states)).reshape(n, self.n_agents, E)
        b1 = self.hyper_b1(states).reshape(n, 1, E)
        hidden = ad.elu(chosen_q.reshape(n, 1, self.n_agents) @ w1 + b1)
        w2 = ad.absolute(self._hyper(self.hyper_w2, states)).reshape(n, E, 1)
        v = self.v2(ad.relu(self.v1(states)))
        return (hidden @ w2).reshape(n) + v.reshape(n)


def qmix_mix(mixer: QMixer, chosen_q, state) -> float:
    q = np.asarray(chosen_q, dtype=float).reshape(1, -1)
    s = np.asarray(state, dtype=float).reshape(1, -1)
    return float(mixer(q, s).data[0])


def epsilon_greedy(q: np.ndarray, epsilon: float, legal_mask: np.ndarray, rng: np.random.Generator) -> int:
    """Uniform over legal actions with prob ``epsilon``, else the lowest-index legal argmax."""
    return int(epsilon_greedy_joint(np.asarray(q, dtype=float)[None], epsilon, np.asarray(legal_mask)[None], rng)[0])


def epsilon_greedy_joint(q: np.ndarray, epsilon: float, legal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise :func:`epsilon_greedy` for an (I, A) block; two uniforms per row."""
    legal = np.asarray(legal, dtype=bool)
    if legal.all():
        u = rng.random((2, q.shape[0]))
        n = q.shape[1]
        uniform = np.minimum((u[1] * n).astype(np.int64), n - 1)
        return np.where(u[0] < epsilon, uniform, np.argmax(q, axis=1))
    counts = legal.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("no legal action")
    u = rng.random((2, q.shape[0]))
    greedy = np.argmax(np.where(legal, q, -np.inf), axis=1)
    # k-th legal action, k uniform in [0, count)
    k = np.minimum((u[1] * counts).astype(np.int64), counts - 1)
    rank = np.cumsum(legal, axis=1) - 1
    uniform = np.argmax(legal & (rank == k[:, None]), axis=1)
    return np.where(u[0] < epsilon, uniform, greedy)


# -------------------------------------------------------------------- replay


@dataclass
class Episode:
    obs: np.ndarray  # (L+1, I, obs_dim)
    state: np.ndarray  # (L+1, state_dim)
    actions: np.ndarray  # (L, I)
    legal: np.ndarray  # (L+1, I, A)
    reward: np.ndarray  # (L,)
    terminal: np.ndarray  # (L,)

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def ret(self) -> float:
        return float(self.reward.sum())


@dataclass
class EpisodeBatch:
    obs: np.ndarray  # (B, T+1, I, obs_dim)
    state: np.ndarray  # (B, T+1, S)
    actions: np.ndarray  # (B, T, I)
    legal: np.ndarray  # (B, T+1, I, A)
    reward: np.ndarray  # (B, T)
    terminal: np.ndarray  # (B, T)
    filled: np.ndarray  # (B, T)
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.actions.shape[0])

    def trimmed(self) -> "EpisodeBatch":
        """Drop trailing time steps that are padding in every episode."""
        filled_any = self.filled.any(axis=0)
        T = int(np.flatnonzero(filled_any)[-1]) + 1 if filled_any.any() else 0
        return EpisodeBatch(
            self.obs[:, : T + 1], self.state[:, : T + 1], self.actions[:, :T], self.legal[:, : T + 1],
            self.reward[:, :T], self.terminal[:, :T], self.filled[:, :T], self.ids,
        )


class ReplayBuffer:
    """FIFO store of whole episodes; batches are padded to ``e_max`` on the way out."""

    def __init__(self, capacity: int, e_max: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.e_max = e_max
        self.episodes: deque[tuple[int, Episode]] = deque(maxlen=capacity)
        self.n_stored = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def store_episode(self, episode: Episode) -> None:
        if episode.length > self.e_max:
            raise ValueError(f"episode of length {episode.length} exceeds e_max={self.e_max}")
        if episode.length < 1:
            raise ValueError("empty episode")
        self.episodes.append((self.n_stored, episode))
        self.n_stored += 1

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> EpisodeBatch:
        if len(self) < batch_size:
            raise ValueError(f"buffer holds {len(self)} episodes, cannot sample {batch_size}")
        idx = rng.choice(len(self), size=batch_size, replace=False)
        return self.pad([self.episodes[i][1] for i in idx], ids=np.array([self.episodes[i][0] for i in idx]))

    def pad(self, episodes: list[Episode], ids=None) -> EpisodeBatch:
        B, T = len(episodes), self.e_max
        first = episodes[0]
        n_agents, obs_dim = first.obs.shape[1:]
        n_actions = first.legal.shape[-1]
        obs = np.zeros((B, T + 1, n_agents, obs_dim))
        state = np.zeros((B, T + 1, first.state.shape[-1]))
        actions = np.zeros((B, T, n_agents), dtype=np.int64)
        legal = np.zeros((B, T + 1, n_agents, n_actions), dtype=bool)
        reward = np.zeros((B, T))
        terminal = np.zeros((B, T), dtype=bool)
        filled = np.zeros((B, T), dtype=bool)
        for b, ep in enumerate(episodes):
            L = ep.length
            obs[b, : L + 1] = ep.obs
            state[b, : L + 1] = ep.state
            actions[b, :L] = ep.actions
            legal[b, : L + 1] = ep.legal
            reward[b, :L] = ep.reward
            terminal[b, :L] = ep.terminal
            filled[b, :L] = True
        ids = np.zeros(B, dtype=np.int64) if ids is None else np.asarray(ids)
        return EpisodeBatch(obs, state, actions, legal, reward, terminal, filled, ids)


# ------------------------------------------------------------------- learner


class Learner:
    """CTDE value-decomposition learner (VDN or QMIX) with target networks."""

    def __init__(self, n_agents: int, n_actions: int, obs_dim: int, state_dim: int, config: TrainerConfig, rng: np.random.Generator):
        self.config = config
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.obs_dim = obs_dim
        self.state_dim = state_dim
        input_dim = obs_dim + n_actions + n_agents
        self.agent = AgentNetwork(rng, input_dim, n_actions, config.hidden_dim)
        if config.mixer == "qmix":
            self.mixer = QMixer(rng, n_agents, state_dim, config.mixing_embed_dim, config.hypernet_layers, config.hypernet_embed)
        else:
            self.mixer = VDNMixer()
        self.target_agent = copy.deepcopy(self.agent)
        self.target_mixer = copy.deepcopy(self.mixer)
        self.params = self.agent.params() + self.mixer.params()
        self.optimizer = ad.RMSProp(self.params, ad.RMSPropConfig(config.lr, config.rms_alpha, config.rms_eps))
        self.last_q: np.ndarray | None = None
        self.last_filled: np.ndarray | None = None
        self.last_grad_norm = 0.0
        self.n_updates = 0

    # acting -----------------------------------------------------------------

    def init_hidden(self) -> np.ndarray:
        return np.zeros((self.n_agents, self.config.hidden_dim))

    def q_values(self, obs: np.ndarray, last_actions: np.ndarray, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Works for one step of (I, obs_dim) or a stack (K, I, obs_dim) with hidden (K*I, H)."""
        inputs = build_inputs(obs, last_actions, self.n_actions)
        q, h = self.agent.step(inputs.reshape(-1, inputs.shape[-1]), hidden)
        return q.reshape(inputs.shape[:-1] + (self.n_actions,)), h

    def act(self, obs, last_actions, hidden, legal, epsilon: float, rng: np.random.Generator):
        q, h = self.q_values(obs, last_actions, hidden)
        return epsilon_greedy_joint(q, epsilon, legal, rng), h

    # training ---------------------------------------------------------------

    def _unroll(self, net: AgentNetwork, batch: EpisodeBatch, steps: int):
        """Agent q-values for t = 0..steps-1, time-major (steps, B, I, A)."""
        B, I = batch.size, self.n_agents
        prev = np.full((steps, B, I), -1, dtype=np.int64)
        if steps > 1:
            prev[1:] = batch.actions[:, : steps - 1].transpose(1, 0, 2)
        obs = batch.obs[:, :steps].transpose(1, 0, 2, 3)
        x = build_inputs(obs, prev, self.n_actions).reshape(steps, B * I, -1)
        q = net.forward_sequence(x, net.init_hidden(B * I))
        return q.reshape(steps, B, I, self.n_actions)

    def td_targets(self, batch: EpisodeBatch) -> np.ndarray:
        """y_l = r_l + gamma * (1 - terminal_l) * Qbar_tot(s_{l+1}, per-agent max of target nets)."""
        B, T = batch.actions.shape[:2]
        tq = self._unroll(self.target_agent, batch, T + 1).data.transpose(1, 0, 2, 3)  # (B,T+1,I,A)
        nxt = tq[:, 1:]
        legal = batch.legal[:, 1:]
        has_legal = legal.any(axis=-1, keepdims=True)
        legal = np.where(has_legal, legal, True)
        best = np.where(legal, nxt, -np.inf).max(axis=-1)  # (B,T,I)
        q_next = self.target_mixer(best.reshape(B * T, self.n_agents), batch.state[:, 1:].reshape(B * T, -1))
        q_next = q_next.data.reshape(B, T)
        return batch.reward + self.config.gamma * (1.0 - batch.terminal) * q_next

    def td_update(self, batch: EpisodeBatch) -> float:
        """One masked TD(0) step on online agent + mixer parameters; returns the loss."""
        if batch.size == 0:
            raise ValueError("empty batch")
        batch = batch.trimmed()
        B, T = batch.actions.shape[:2]
        if T == 0:
            raise ValueError("batch has no filled steps")
        targets = self.td_targets(batch)
        for p in self.params:
            p.grad = None
        # overflow surfaces as a non-finite loss, checked right below
        with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
            qs = self._unroll(self.agent, batch, T)  # (T,B,I,A)
            act = batch.actions.transpose(1, 0, 2)[..., None]
            chosen = ad.gather(qs, act, axis=-1).reshape(T * B, self.n_agents)
            states = batch.state[:, :T].transpose(1, 0, 2).reshape(T * B, -1)
            q_tot = self.mixer(chosen, states).reshape(T, B)
            td = q_tot - targets.T
            mask = batch.filled.T.astype(float)
            loss = ad.multiply(ad.masked_sum(ad.square(td), mask=mask), 1.0 / mask.sum())
        value = loss.item()
        if not np.isfinite(value):
            raise NumericDivergence(f"TD loss became {value}")
        self.last_q = qs.data.transpose(1, 0, 2, 3)
        self.last_filled = batch.filled
        grads = tape.backward(loss, self.params)
        try:
            grads, self.last_grad_norm = ad.clip_grad_norm(grads, self.config.grad_norm_clip)
            self.optimizer.step(grads)
        except ad.NonFiniteGradient as e:
            raise NumericDivergence(str(e)) from e
        self.n_updates += 1
        return value

    def sync_targets(self) -> None:
        for dst, src in zip(self.target_agent.params() + self.target_mixer.params(), self.params):
            dst.data = src.data.copy()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def td_update(learner: Learner, batch: EpisodeBatch) -> float:
    return learner.td_update(batch)


def sync_targets(learner: Learner) -> None:
    learner.sync_targets()
