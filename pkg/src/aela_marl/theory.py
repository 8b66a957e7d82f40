"""Closed forms for secure-state visits and regret on dead-end chains, plus MC oracles."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChainModel:
    horizon: int
    p_dead: np.ndarray  # P_d(l), l = 1..T
    p_goal: float = 0.0
    r_goal: float = 10.0
    step_rewards: np.ndarray | None = None
    optimal_rewards: np.ndarray | None = None  # defaults to step_rewards

    def __post_init__(self):
        self.p_dead = np.array(self.p_dead, dtype=np.float64)
        if self.p_dead.shape != (self.horizon,):
            raise ValueError("p_dead needs one entry per step")
        if np.any((self.p_dead < 0) | (self.p_dead > 1)) or not 0 <= self.p_goal <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.step_rewards is None:
            self.step_rewards = np.zeros(self.horizon)
        self.step_rewards = np.array(self.step_rewards, dtype=np.float64)
        if self.optimal_rewards is None:
            self.optimal_rewards = self.step_rewards
        self.optimal_rewards = np.array(self.optimal_rewards, dtype=np.float64)
        self._ps = np.cumprod(1.0 - self.p_dead)
        self._ps_csum = np.cumsum(self._ps)
        # cached curves depend on these arrays, so freeze them
        for arr in (self.p_dead, self.step_rewards, self.optimal_rewards, self._ps, self._ps_csum):
            arr.flags.writeable = False

    @property
    def assumption_holds(self) -> bool:
        return assumption_check(self.step_rewards, self.r_goal)


@dataclass
class VisitStats:
    p_s: np.ndarray
    n_s: float
    n_total: float
    e_n: float
    p_d_agg: float
    n_s_stderr: float = 0.0

    @property
    def n_d(self) -> float:
        return self.n_total - self.n_s


def _check_step(model: ChainModel, l: int) -> None:
    if not 1 <= l <= model.horizon:
        raise ValueError(f"step {l} outside 1..{model.horizon}")


def secure_prob_curve(model: ChainModel) -> np.ndarray:
    """P_s(l) for l = 1..T as an array."""
    return model._ps


def secure_prob(model: ChainModel, l: int) -> float:
    """P_s(l) = prod_{k<=l} (1 - P_d(k))."""
    _check_step(model, l)
    return float(np.multiply.reduce(1.0 - model.p_dead[:l]))


def expected_secure_visits(model: ChainModel, e_l: int, n_total: float) -> float:
    """N_s = (N_total / E_L) * sum_{l<=E_L} P_s(l)."""
    _check_step(model, e_l)
    return n_total / e_l * float(model._ps_csum[e_l - 1])


def delta_Ns(model: ChainModel, e_l: int, n_total: float) -> float:
    """N_s(E_L + 1) - N_s(E_L) in the combined-fraction form."""
    _check_step(model, e_l)
    _check_step(model, e_l + 1)
    ps = secure_prob_curve(model)
    # e_l * P_s(e_l+1) - sum P_s(l), written as a sum of non-positive terms
    numerator = -float(np.add.reduce(ps[:e_l] - ps[e_l]))
    return n_total / (e_l * (e_l + 1)) * numerator


def visit_stats(model: ChainModel, e_l: int, n_total: float) -> VisitStats:
    n_s = expected_secure_visits(model, e_l, n_total)
    return VisitStats(
        p_s=secure_prob_curve(model)[:e_l],
        n_s=n_s,
        n_total=n_total,
        e_n=n_total / e_l,
        p_d_agg=1.0 - n_s / n_total,
    )


def aggregate_dead_prob_curve(model: ChainModel) -> np.ndarray:
    """1 - N_s/N_total for E_L = 1..T, accumulated from the non-negative per-step increments.

    Going from E_L to E_L + 1 adds -delta_Ns / N_total, which is a sum of
    non-negative terms, so the returned curve is monotone in floating point too.
    """
    ps = secure_prob_curve(model)
    out = np.empty(model.horizon)
    out[0] = 1.0 - ps[0]
    for e in range(1, model.horizon):
        out[e] = out[e - 1] + float(np.add.reduce(ps[:e] - ps[e])) / (e * (e + 1))
    return out


def _regret_bracket(model: ChainModel, T: int) -> np.ndarray:
    r = model.step_rewards[:T]
    cum = np.cumsum(r)
    return cum[-1] - cum - model.r_goal  # sum_{t<=T} r_t - sum_{t<=k} r_t - r_g


def regret(model: ChainModel, T: int, p_d: float, p_g: float) -> float:
    """Regret(T) with constant dead-end and goal probabilities."""
    if not (0 <= p_d <= 1 and 0 <= p_g <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    k = np.arange(1, T + 1)
    first = float(np.sum(model.optimal_rewards[:T] - model.step_rewards[:T]))
    second = float(np.sum((1.0 - p_d) ** (k - 1) * p_g * _regret_bracket(model, T)))
    return first + second + model.r_goal


def regret_derivative(model: ChainModel, T: int, p_d: float, p_g: float) -> float:
    """d Regret(T) / d P_d."""
    if not (0 <= p_d <= 1 and 0 <= p_g <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    k = np.arange(1, T + 1)
    # the k = 1 term has a zero factor; keep it out of 0 ** -1
    powers = np.where(k >= 2, (1.0 - p_d) ** np.maximum(k - 2, 0), 0.0)
    return float(np.sum(-(k - 1) * powers * p_g * _regret_bracket(model, T)))


def assumption_check(step_rewards, r_goal: float) -> bool:
    """True iff every contiguous reward sum is strictly below ``r_goal``."""
    r = np.asarray(step_rewards, dtype=np.float64)
    if r.size == 0:
        return True
    best = cur = r[0]
    for x in r[1:]:
        cur = max(x, cur + x)
        best = max(best, cur)
    return bool(best < r_goal)


def mc_visit_oracle(model: ChainModel, e_l: int, episodes: int, rng: np.random.Generator) -> VisitStats:
    """Simulate ``episodes`` fixed-length rollouts of the dead-end lottery.

    Each step l first draws the dead-end event with P_d(l); once in the dead
    end the rollout stays there.  Returns empirical P_s(l), N_s scaled to the
    sample count and the standard error of N_s.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    _check_step(model, e_l)
    falls = rng.random((episodes, e_l)) < model.p_dead[:e_l]
    secure = ~np.logical_or.accumulate(falls, axis=1)  # secure at step l
    per_episode = secure.sum(axis=1)
    n_total = float(episodes * e_l)
    n_s = float(per_episode.sum())
    stderr = float(per_episode.std(ddof=1) * np.sqrt(episodes)) if episodes > 1 else 0.0
    return VisitStats(
        p_s=secure.mean(axis=0),
        n_s=n_s,
        n_total=n_total,
        e_n=float(episodes),
        p_d_agg=1.0 - n_s / n_total,
        n_s_stderr=stderr,
    )


# ------------------------------------------------------------ random models


def random_model(rng: np.random.Generator, max_horizon: int = 50, *, assumption: bool | None = None) -> ChainModel:
    """Random chain; ``assumption=True`` draws rewards satisfying the goal-dominance condition."""
    T = int(rng.integers(2, max_horizon + 1))
    kind = rng.integers(3)
    if kind == 0:
        p_dead = rng.uniform(0, 1, T)
    elif kind == 1:
        p_dead = rng.uniform(0, 0.2, T) * (rng.random(T) < 0.5)
    else:
        p_dead = np.full(T, rng.uniform(0, 0.3))
    r_goal = float(rng.uniform(1, 20))
    rewards = rng.normal(0, 1, T)
    if assumption:
        # rescale so the max subarray sum sits strictly under r_goal
        pos = np.clip(rewards, 0, None).sum()
        if pos > 0:
            rewards = rewards * (0.95 * r_goal / pos) * rng.uniform(0.1, 1.0)
    elif assumption is False:
        rewards[0] = r_goal + abs(rewards[0])
    return ChainModel(
        horizon=T,
        p_dead=p_dead,
        p_goal=float(rng.uniform(0.01, 1.0)),
        r_goal=r_goal,
        step_rewards=rewards,
    )


# ----------------------------------------------------------- check suite


@dataclass
class Check:
    name: str
    computed: float
    bound: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""


def check_secure_monotone(rng, n_models: int = 10_000) -> Check:
    start = time.perf_counter()
    violations = 0
    for _ in range(n_models):
        m = random_model(rng)
        ps = [secure_prob(m, l) for l in range(1, m.horizon + 1)]
        violations += int(np.sum(np.diff(ps) > 0))
    return Check("secure_prob_nonincreasing", violations, 0, violations == 0, time.perf_counter() - start)


def check_visit_shift(rng, n_models: int = 10_000) -> tuple[Check, Check]:
    start = time.perf_counter()
    violations, worst = 0, 0.0
    for _ in range(n_models):
        m = random_model(rng)
        n_total = float(rng.uniform(1, 10))
        for e_l in range(1, m.horizon):
            d = delta_Ns(m, e_l, n_total)
            direct = expected_secure_visits(m, e_l + 1, n_total) - expected_secure_visits(m, e_l, n_total)
            violations += d > 0
            worst = max(worst, abs(d - direct))
    dt = time.perf_counter() - start
    return (
        Check("delta_Ns_nonpositive", violations, 0, violations == 0, dt),
        Check("delta_Ns_matches_direct", worst, 1e-12, worst <= 1e-12, dt),
    )


def check_aggregate_dead_prob(rng, n_models: int = 10_000) -> tuple[Check, Check]:
    start = time.perf_counter()
    violations, worst = 0, 0.0
    for _ in range(n_models):
        m = random_model(rng)
        curve = aggregate_dead_prob_curve(m)
        violations += int(np.sum(np.diff(curve) < 0))
        csum = np.cumsum(secure_prob_curve(m))
        direct = 1.0 - csum / np.arange(1, m.horizon + 1)
        worst = max(worst, float(np.max(np.abs(curve - direct))))
    dt = time.perf_counter() - start
    return (
        Check("aggregate_p_d_nondecreasing_in_E_L", violations, 0, violations == 0, dt),
        Check("aggregate_p_d_matches_direct", worst, 1e-12, worst <= 1e-12, dt),
    )


def check_regret_slope(rng, n_models: int = 1000, h: float = 1e-6) -> tuple[Check, Check]:
    start = time.perf_counter()
    violations, worst = 0, 0.0
    done = 0
    while done < n_models:
        m = random_model(rng, assumption=True)
        if not m.assumption_holds or m.horizon < 2 or m.p_goal <= 0:
            continue
        done += 1
        p_d = float(rng.uniform(0.01, 0.99))
        d = regret_derivative(m, m.horizon, p_d, m.p_goal)
        violations += not d > 0
        fd = (regret(m, m.horizon, p_d + h, m.p_goal) - regret(m, m.horizon, p_d - h, m.p_goal)) / (2 * h)
        worst = max(worst, abs(d - fd) / max(1.0, abs(fd)))
    dt = time.perf_counter() - start
    return (
        Check("regret_derivative_positive", violations, 0, violations == 0, dt),
        Check("regret_derivative_matches_finite_difference", worst, 1e-8, worst <= 1e-8, dt),
    )


def check_monte_carlo(rng, n_models: int = 20, episodes: int = 100_000) -> Check:
    start = time.perf_counter()
    worst = 0.0
    for _ in range(n_models):
        m = random_model(rng, max_horizon=30)
        e_l = int(rng.integers(1, m.horizon + 1))
        emp = mc_visit_oracle(m, e_l, episodes, rng)
        exact = expected_secure_visits(m, e_l, emp.n_total)
        if emp.n_s_stderr == 0:
            z = 0.0 if emp.n_s == exact else np.inf
        else:
            z = abs(emp.n_s - exact) / emp.n_s_stderr
        worst = max(worst, z)
    return Check("monte_carlo_N_s_within_3_stderr", worst, 3.0, worst <= 3.0, time.perf_counter() - start)


def run_suite(seed: int = 0, quick: bool = False) -> list[Check]:
    rng = np.random.default_rng(seed)
    scale = 10 if quick else 1
    checks = [check_secure_monotone(rng, 10_000 // scale)]
    checks.extend(check_visit_shift(rng, 10_000 // scale))
    checks.extend(check_aggregate_dead_prob(rng, 10_000 // scale))
    checks.extend(check_regret_slope(rng, 1000 // scale))
    checks.append(check_monte_carlo(rng, 20, 100_000 // scale))
    return checks


def checks_to_csv(checks: list[Check]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "computed", "bound", "pass"])
    for c in checks:
        writer.writerow([c.name, repr(float(c.computed)), repr(float(c.bound)), str(c.passed).lower()])
    return buf.getvalue()
