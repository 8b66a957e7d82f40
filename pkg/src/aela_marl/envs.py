"""Dec-POMDP environments: modified predator-prey (MPP) and a dead-end chain."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecPomdpSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    gamma: float
    e_max: int

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.n_actions < 2:
            raise ValueError("n_actions must be >= 2")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.e_max < 1:
            raise ValueError("e_max must be >= 1")


@dataclass
class StepResult:
    reward: float
    next_obs: np.ndarray  # (n_agents, obs_dim)
    next_state: np.ndarray
    terminal: bool
    info_capture: dict[str, Any] | None = None


def seeded_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed on a tuple of non-negative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


class DecPomdpEnv:
    """Common interface.  Subclasses fill in ``_reset`` and ``_step``."""

    spec: DecPomdpSpec

    def __init__(self):
        self._terminal = True
        self._started = False

    def reset(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        self._started = True
        self._terminal = False
        return self._reset(seed)

    def step(self, joint_action) -> StepResult:
        if not self._started or self._terminal:
            raise EnvError("step() called on a finished episode; call reset() first")
        actions = np.asarray(joint_action, dtype=np.int64).reshape(-1)
        if actions.shape[0] != self.spec.n_agents:
            raise EnvError(f"expected {self.spec.n_agents} actions, got {actions.shape[0]}")
        if np.any(actions < 0) or np.any(actions >= self.spec.n_actions):
            raise EnvError(f"action ids must lie in [0, {self.spec.n_actions}), got {actions.tolist()}")
        res = self._step(actions)
        self._terminal = res.terminal
        return res

    def legal_actions(self, agent_id: int) -> np.ndarray:
        if not 0 <= agent_id < self.spec.n_agents:
            raise EnvError(f"invalid agent id {agent_id}")
        return np.ones(self.spec.n_actions, dtype=bool)

    def legal_mask(self) -> np.ndarray:
        return np.stack([self.legal_actions(i) for i in range(self.spec.n_agents)])

    @property
    def terminal(self) -> bool:
        return self._terminal

    def _reset(self, seed: int):
        raise NotImplementedError

    def _step(self, actions: np.ndarray) -> StepResult:
        raise NotImplementedError


# --------------------------------------------------------------------- MPP

STAY, NORTH, SOUTH, EAST, WEST, CAPTURE = range(6)
_MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, 1], [0, -1]], dtype=np.int64)


@dataclass
class MppConfig:
    grid_size: int = 7
    n_predators: int = 4
    n_prey: int = 4
    penalty: float = -2.0
    obs_radius: int = 2
    capture_reward: float = 10.0
    e_max: int = 100
    gamma: float = 0.99

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be >= 3")
        if self.n_predators < 2:
            raise ValueError("need at least two predators")
        if self.n_prey < 1:
            raise ValueError("need at least one prey")
        if self.penalty > 0:
            raise ValueError("penalty must be <= 0")
        if self.capture_reward <= 0:
            raise ValueError("capture_reward must be > 0")
        if self.obs_radius < 0:
            raise ValueError("obs_radius must be >= 0")
        if self.n_predators + self.n_prey > self.grid_size**2:
            raise ValueError("grid too small for all animals")


class MppEnv(DecPomdpEnv):
    """Toroidal predator-prey grid with a mis-coordination penalty.

    Predators have five moves plus a capture action.  A capture targets the
    lowest-index live prey at Manhattan distance <= 1.  Per prey and step:
    two or more capturing predators give ``capture_reward`` and remove the
    prey; exactly one gives ``penalty``.  Captures are resolved on the
    positions the predators observed, then predators move, then every live
    prey takes a uniformly random move.  Cells may be shared.
    """

    def __init__(self, config: MppConfig | None = None):
        super().__init__()
        self.config = config or MppConfig()
        c = self.config
        side = 2 * c.obs_radius + 1
        self.spec = DecPomdpSpec(
            n_agents=c.n_predators,
            n_actions=6,
            obs_dim=2 * side * side,
            state_dim=2 * c.n_predators + 3 * c.n_prey,
            gamma=c.gamma,
            e_max=c.e_max,
        )
        self._offsets = np.arange(-c.obs_radius, c.obs_radius + 1)
        self.predators = np.zeros((c.n_predators, 2), dtype=np.int64)
        self.prey = np.zeros((c.n_prey, 2), dtype=np.int64)
        self.alive = np.zeros(c.n_prey, dtype=bool)
        self.rng = seeded_rng(0)

    def _reset(self, seed: int):
        c = self.config
        self.rng = seeded_rng(int(seed), 1)
        cells = self.rng.choice(c.grid_size**2, size=c.n_predators + c.n_prey, replace=False)
        pos = np.stack([cells // c.grid_size, cells % c.grid_size], axis=1)
        self.predators = pos[: c.n_predators].copy()
        self.prey = pos[c.n_predators :].copy()
        self.alive = np.ones(c.n_prey, dtype=bool)
        return self.get_state(), self.get_obs()

    def _capture_target(self, i: int) -> int:
        g = self.config.grid_size
        d = np.abs(self.prey - self.predators[i])
        d = np.minimum(d, g - d).sum(axis=1)
        hits = np.flatnonzero((d <= 1) & self.alive)
        return int(hits[0]) if hits.size else -1

    def _step(self, actions: np.ndarray) -> StepResult:
        c = self.config
        counts = np.zeros(c.n_prey, dtype=np.int64)
        for i in np.flatnonzero(actions == CAPTURE):
            target = self._capture_target(int(i))
            if target >= 0:
                counts[target] += 1
        captured = counts >= 2
        solo = counts == 1
        reward = c.capture_reward * float(captured.sum()) + c.penalty * float(solo.sum())
        self.alive &= ~captured

        moving = actions < CAPTURE
        self.predators[moving] = (self.predators[moving] + _MOVES[actions[moving]]) % c.grid_size
        prey_moves = self.rng.integers(0, 5, size=c.n_prey)
        live = self.alive
        self.prey[live] = (self.prey[live] + _MOVES[prey_moves[live]]) % c.grid_size

        terminal = not bool(self.alive.any())
        info = {
            "captured": np.flatnonzero(captured).tolist(),
            "solo": np.flatnonzero(solo).tolist(),
            "all_captured": terminal,
        }
        return StepResult(reward, self.get_obs(), self.get_state(), terminal, info)

    def get_state(self) -> np.ndarray:
        c = self.config
        scale = 1.0 / (c.grid_size - 1)
        prey = self.prey * scale * self.alive[:, None]
        return np.concatenate(
            [
                (self.predators * scale).reshape(-1),
                prey.reshape(-1),
                self.alive.astype(np.float64),
            ]
        )

    def get_obs(self) -> np.ndarray:
        c = self.config
        g, r = c.grid_size, c.obs_radius
        side = 2 * r + 1
        if side > g:
            return self._get_obs_wrapped()
        n = c.n_predators
        win = np.zeros((n, 2, side, side))
        # toroidal displacement of every entity from every predator, shifted into window coords
        d = (self.predators[None] - self.predators[:, None] + r) % g
        seen = (d < side).all(axis=-1)
        np.fill_diagonal(seen, False)
        i, j = np.nonzero(seen)
        win[i, 0, d[i, j, 0], d[i, j, 1]] = 1.0
        live = self.prey[self.alive]
        d = (live[None] - self.predators[:, None] + r) % g
        i, j = np.nonzero((d < side).all(axis=-1))
        win[i, 1, d[i, j, 0], d[i, j, 1]] = 1.0
        return win.reshape(n, -1)

    def _get_obs_wrapped(self) -> np.ndarray:
        # window wider than the grid: cells repeat, so gather from full planes
        c = self.config
        g = c.grid_size
        planes = np.zeros((2, g, g))
        np.add.at(planes[0], (self.predators[:, 0], self.predators[:, 1]), 1.0)
        live = self.prey[self.alive]
        np.add.at(planes[1], (live[:, 0], live[:, 1]), 1.0)
        rows = (self.predators[:, 0:1] + self._offsets) % g
        cols = (self.predators[:, 1:2] + self._offsets) % g
        win = np.minimum(planes[:, rows[:, :, None], cols[:, None, :]], 1.0)  # (2, n, side, side)
        r = c.obs_radius
        own = planes[0][self.predators[:, 0], self.predators[:, 1]]
        win[0, :, r, r] = np.minimum(own - 1.0, 1.0)
        return win.transpose(1, 0, 2, 3).reshape(c.n_predators, -1)


# ------------------------------------------------------------------- chain


@dataclass
class ChainEnvConfig:
    horizon: int = 20
    p_dead: list[float] = field(default_factory=lambda: [0.05] * 20)
    p_goal: float = 0.1
    r_goal: float = 10.0
    step_rewards: list[float] = field(default_factory=lambda: [0.0] * 20)
    n_agents: int = 2
    gamma: float = 0.99
    require_assumption: bool = False

    def __post_init__(self):
        self.p_dead = [float(p) for p in self.p_dead]
        self.step_rewards = [float(r) for r in self.step_rewards]
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.p_dead) != self.horizon or len(self.step_rewards) != self.horizon:
            raise ValueError("p_dead and step_rewards need one entry per step")
        if any(not 0.0 <= p <= 1.0 for p in self.p_dead):
            raise ValueError("every p_dead entry must lie in [0, 1]")
        if not 0.0 <= self.p_goal <= 1.0:
            raise ValueError("p_goal must lie in [0, 1]")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.require_assumption:
            from .theory import assumption_check

            if not assumption_check(self.step_rewards, self.r_goal):
                raise ValueError("step_rewards violate the goal-reward dominance assumption")


SECURE, DEAD, GOAL = 0, 1, 2


class ChainEnv(DecPomdpEnv):
    """Dead-end lottery chain.

    At interaction step l the process first falls into the absorbing dead end
    with probability ``p_dead[l-1]``.  Otherwise, if every agent chose action
    1 ("push"), the goal is reached with probability ``p_goal`` and pays
    ``step_rewards[l-1] + r_goal``; failing that the step pays
    ``step_rewards[l-1]``.  Dead end and goal are terminal.
    """

    def __init__(self, config: ChainEnvConfig | None = None):
        super().__init__()
        self.config = config or ChainEnvConfig()
        c = self.config
        self.spec = DecPomdpSpec(
            n_agents=c.n_agents, n_actions=2, obs_dim=2, state_dim=3, gamma=c.gamma, e_max=c.horizon
        )
        self.l = 0
        self.status = SECURE
        self.rng = seeded_rng(0)

    def _reset(self, seed: int):
        self.rng = seeded_rng(int(seed), 2)
        self.l = 0
        self.status = SECURE
        return self.get_state(), self.get_obs()

    def _step(self, actions: np.ndarray) -> StepResult:
        c = self.config
        if self.l >= c.horizon:
            raise EnvError("chain horizon exhausted")
        u_dead, u_goal = self.rng.random(2)
        idx = self.l
        self.l += 1
        if u_dead < c.p_dead[idx]:
            self.status = DEAD
            reward = 0.0
        elif np.all(actions == 1) and u_goal < c.p_goal:
            self.status = GOAL
            reward = c.step_rewards[idx] + c.r_goal
        else:
            reward = c.step_rewards[idx]
        terminal = self.status != SECURE
        info = {"status": self.status, "all_captured": self.status == GOAL}
        return StepResult(reward, self.get_obs(), self.get_state(), terminal, info)

    def get_state(self) -> np.ndarray:
        return np.array(
            [float(self.status == SECURE), float(self.status == GOAL), self.l / self.config.horizon]
        )

    def get_obs(self) -> np.ndarray:
        row = np.array([float(self.status == SECURE), self.l / self.config.horizon])
        return np.tile(row, (self.config.n_agents, 1))


def make_env(name: str, config=None) -> DecPomdpEnv:
    if name == "mpp":
        return MppEnv(config)
    if name == "chain":
        return ChainEnv(config)
    raise ValueError(f"unknown environment {name!r} (expected 'mpp' or 'chain')")
