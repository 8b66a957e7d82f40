"""Training loop, evaluation, configuration and metric files."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
import os
import types
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union, get_args, get_origin, get_type_hints

import numpy as np

from .aela import AelaController, initial_length, recommend_window
from .envs import ChainEnvConfig, DecPomdpEnv, MppConfig, make_env, seeded_rng
from .learners import Episode, Learner, NumericDivergence, ReplayBuffer, TrainerConfig, epsilon_at, epsilon_greedy_joint

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# RNG stream ids; evaluation has its own so it never shifts training draws
ENV_STREAM, EXPLORE_STREAM, SAMPLE_STREAM, INIT_STREAM, EVAL_STREAM = 10, 11, 12, 13, 14


class ConfigError(ValueError):
    pass


@dataclass
class AelaSettings:
    enabled: bool = True
    tau: float = 1.0
    initial_fraction: float = 0.25
    window: Union[int, str, None] = "auto"  # int, "auto", or None (never fit)
    budget_fraction: float = 0.8


@dataclass
class RunSettings:
    total_steps: int = 200_000
    eval_interval: int = 10_000
    eval_episodes: int = 32
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"


@dataclass
class ExperimentConfig:
    env: str = "mpp"
    algo: str = "vdn"
    mpp: MppConfig = field(default_factory=MppConfig)
    chain: ChainEnvConfig = field(default_factory=ChainEnvConfig)
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(anneal_steps=50_000))
    aela: AelaSettings = field(default_factory=AelaSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> "ExperimentConfig":
        if self.env not in ("mpp", "chain"):
            raise ConfigError(f"env must be 'mpp' or 'chain', got {self.env!r}")
        if self.algo not in ("vdn", "qmix"):
            raise ConfigError(f"algo must be 'vdn' or 'qmix', got {self.algo!r}")
        if self.run.total_steps <= 0:
            raise ConfigError("run.total_steps must be positive")
        if self.run.eval_interval <= 0:
            raise ConfigError("run.eval_interval must be positive")
        if self.run.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.aela.tau <= 0:
            raise ConfigError("aela.tau must be positive")
        if not 0 < self.aela.initial_fraction <= 1:
            raise ConfigError("aela.initial_fraction must lie in (0, 1]")
        w = self.aela.window
        if not (w is None or w == "auto" or (isinstance(w, int) and w >= 2)):
            raise ConfigError(f"aela.window must be an int >= 2, 'auto' or 'none'; got {w!r}")
        self.trainer.mixer = self.algo
        return self

    def env_config(self):
        return self.mpp if self.env == "mpp" else self.chain


# ------------------------------------------------------------ config files


def _parse_value(raw: str, hint) -> Any:
    raw = raw.strip()
    origin = get_origin(hint)
    args = get_args(hint)
    if origin is Union or origin is types.UnionType:
        if raw.lower() in ("none", "null", "") and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _parse_value(raw, a)
            except (ValueError, TypeError) as e:
                errors.append(str(e))
        raise ValueError(f"cannot parse {raw!r}: {'; '.join(errors)}")
    if origin is list:
        (inner,) = args
        return [_parse_value(x, inner) for x in raw.split(",") if x.strip()]
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    raise TypeError(f"unsupported field type {hint}")


def _sections(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"mpp": cfg.mpp, "chain": cfg.chain, "trainer": cfg.trainer, "aela": cfg.aela, "run": cfg.run}


def apply_overrides(cfg: ExperimentConfig, flat: dict[str, str]) -> ExperimentConfig:
    """Set ``section.field`` (or top-level ``env``/``algo``) keys from strings."""
    sections = _sections(cfg)
    for key, raw in flat.items():
        if key in ("env", "algo"):
            setattr(cfg, key, raw.strip())
            continue
        section, _, name = key.partition(".")
        target = sections.get(section)
        if target is None or not name:
            raise ConfigError(f"unknown config key {key!r}")
        hints = get_type_hints(type(target))
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(target, name, _parse_value(raw, hints[name]))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{key}: {e}") from e
    # re-run dataclass validation on sections that define it
    for name, obj in sections.items():
        try:
            if hasattr(obj, "__post_init__"):
                obj.__post_init__()
        except ValueError as e:
            raise ConfigError(f"{name}: {e}") from e
    return cfg.validate()


def parse_config_text(text: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        flat[key.strip()] = value.strip()
    return flat


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    flat: dict[str, str] = {}
    if path is not None:
        flat.update(parse_config_text(Path(path).read_text()))
    flat.update(overrides or {})
    return apply_overrides(cfg, flat)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat = {"env": cfg.env, "algo": cfg.algo}
    for section, obj in _sections(cfg).items():
        for f in dataclasses.fields(obj):
            flat[f"{section}.{f.name}"] = _fmt(getattr(obj, f.name))
    return flat


def config_to_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_flat(cfg).items())


# ---------------------------------------------------------------- logging


@dataclass
class MetricRow:
    step: int
    e_l: int
    h_total: float | None
    alpha: float | None
    train_return: float | None
    test_return_median: float
    success_rate: float
    loss: float | None
    episodes: int
    end_step_hist: list[int]
    samples_per_step: list[int]


CSV_COLUMNS = [f.name for f in dataclasses.fields(MetricRow)]
# the header's last column names the schema version; its cells stay empty
SCHEMA_COLUMN = f"schema_v{SCHEMA_VERSION}"


@dataclass
class RunLog:
    config: dict[str, str]
    seed: int
    rows: list[MetricRow] = field(default_factory=list)
    rng_states: dict[str, Any] = field(default_factory=dict)
    checksum: str = ""
    diverged: bool = False
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunLog":
        d = json.loads(text)
        d["rows"] = [MetricRow(**r) for r in d["rows"]]
        return cls(**d)

    def replay_view(self) -> dict[str, Any]:
        """Everything except the config snapshot."""
        d = dataclasses.asdict(self)
        d.pop("config")
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.integer):
        return int(x)
    return x


# ------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    median_return: float
    success_rate: float
    end_steps: list[int]
    returns: list[float]


def rollout(env: DecPomdpEnv, learner: Learner, env_seed: int, limit: int, epsilon: float, rng: np.random.Generator) -> tuple[Episode, bool]:
    """Run one episode for at most ``limit`` steps; returns it and the success flag."""
    state, obs = env.reset(env_seed)
    n = env.spec.n_agents
    hidden = learner.init_hidden()
    last = np.full(n, -1, dtype=np.int64)
    obs_l, state_l, legal_l = [obs], [state], [env.legal_mask()]
    acts, rews, terms = [], [], []
    success = False
    for _ in range(limit):
        actions, hidden = learner.act(obs, last, hidden, legal_l[-1], epsilon, rng)
        res = env.step(actions)
        obs, last = res.next_obs, actions
        obs_l.append(obs)
        state_l.append(res.next_state)
        legal_l.append(env.legal_mask() if not res.terminal else np.ones_like(legal_l[-1]))
        acts.append(actions)
        rews.append(res.reward)
        terms.append(res.terminal)
        if res.terminal:
            success = bool(res.info_capture and res.info_capture.get("all_captured"))
            break
    ep = Episode(
        obs=np.asarray(obs_l, dtype=np.float64),
        state=np.asarray(state_l, dtype=np.float64),
        actions=np.asarray(acts, dtype=np.int64),
        legal=np.asarray(legal_l, dtype=bool),
        reward=np.asarray(rews, dtype=np.float64),
        terminal=np.asarray(terms, dtype=bool),
    )
    return ep, success


def evaluate(learner: Learner, env: DecPomdpEnv, n_episodes: int, seed: int, epsilon: float = 0.0) -> EvalResult:
    """Greedy episodes run to a natural end or the task horizon (never the training limit).

    All episodes advance in lockstep on private copies of ``env`` so the agent
    network runs once per step for the whole set.
    """
    rng = seeded_rng(seed, EVAL_STREAM)
    seeds = rng.integers(0, 2**31 - 1, size=n_episodes)
    n_agents, n_actions = env.spec.n_agents, env.spec.n_actions
    envs = [copy.deepcopy(env) for _ in range(n_episodes)]
    obs = np.stack([e.reset(int(s))[1] for e, s in zip(envs, seeds)])
    last = np.full((n_episodes, n_agents), -1, dtype=np.int64)
    hidden = np.zeros((n_episodes * n_agents, learner.config.hidden_dim))
    returns = np.zeros(n_episodes)
    ends = np.zeros(n_episodes, dtype=np.int64)
    wins = np.zeros(n_episodes, dtype=bool)
    active = np.ones(n_episodes, dtype=bool)
    for _ in range(env.spec.e_max):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        rows = (idx[:, None] * n_agents + np.arange(n_agents)).reshape(-1)
        legal = np.stack([envs[k].legal_mask() for k in idx]).reshape(-1, n_actions)
        q, hidden[rows] = learner.q_values(obs[idx], last[idx], hidden[rows])
        actions = epsilon_greedy_joint(q.reshape(-1, n_actions), epsilon, legal, rng).reshape(-1, n_agents)
        for k, a in zip(idx, actions):
            res = envs[k].step(a)
            returns[k] += res.reward
            ends[k] += 1
            obs[k], last[k] = res.next_obs, a
            if res.terminal:
                active[k] = False
                wins[k] = bool(res.info_capture and res.info_capture.get("all_captured"))
    return EvalResult(float(np.median(returns)), float(wins.mean()), ends.tolist(), returns.tolist())


# --------------------------------------------------------------- training


def resolve_window(aela: AelaSettings, total_steps: int, e_max: int, e_l0: int) -> int | None:
    """Trend window; None means the controller never fits (inert when e_l0 == e_max)."""
    if aela.window is None:
        return None
    if aela.window == "auto":
        if e_l0 >= e_max:
            return None
        return max(2, recommend_window(aela.budget_fraction * total_steps, e_max, e_l0))
    return int(aela.window)


def initial_limit(cfg: ExperimentConfig, e_max: int) -> int:
    return initial_length(e_max, cfg.aela.initial_fraction) if cfg.aela.enabled else e_max


def _histogram(values, size: int) -> list[int]:
    h = np.zeros(size, dtype=np.int64)
    for v in values:
        h[v - 1] += 1
    return h.tolist()


def run_training(config: ExperimentConfig, seed: int) -> RunLog:
    """Training loop: roll out under the current limit, store, update, adapt, evaluate."""
    config.validate()
    cfg_tr = config.trainer
    env = make_env(config.env, config.env_config())
    eval_env = make_env(config.env, config.env_config())
    spec = env.spec
    env_rng = seeded_rng(seed, ENV_STREAM)
    explore_rng = seeded_rng(seed, EXPLORE_STREAM)
    sample_rng = seeded_rng(seed, SAMPLE_STREAM)
    learner = Learner(spec.n_agents, spec.n_actions, spec.obs_dim, spec.state_dim, cfg_tr, seeded_rng(seed, INIT_STREAM))
    buffer = ReplayBuffer(cfg_tr.buffer_size, spec.e_max)

    e_max = spec.e_max
    e_l0 = initial_limit(config, e_max)
    window = resolve_window(config.aela, config.run.total_steps, e_max, e_l0)
    ctrl = AelaController(e_l0, e_max, window, config.aela.tau)
    runlog = RunLog(config=config_to_flat(config), seed=seed)
    log.info("seed %d: E_L0=%d E_max=%d window=%s", seed, e_l0, e_max, window)

    t = t_p = 0
    next_eval = 0
    episodes = 0
    samples = np.zeros(e_max, dtype=np.int64)
    recent_returns: list[float] = []
    last_loss: float | None = None

    def record():
        res = evaluate(learner, eval_env, config.run.eval_episodes, seed * 1_000_003 + len(runlog.rows))
        runlog.rows.append(
            MetricRow(
                step=t,
                e_l=ctrl.e_l,
                h_total=None if math.isnan(ctrl.last_h) else ctrl.last_h,
                alpha=None if math.isnan(ctrl.last_alpha) else ctrl.last_alpha,
                train_return=float(np.mean(recent_returns)) if recent_returns else None,
                test_return_median=res.median_return,
                success_rate=res.success_rate,
                loss=last_loss,
                episodes=episodes,
                end_step_hist=_histogram(res.end_steps, e_max),
                samples_per_step=samples.tolist(),
            )
        )
        recent_returns.clear()
        log.info("seed %d step %d E_L %d test return %.3f", seed, t, ctrl.e_l, res.median_return)

    try:
        while t < config.run.total_steps:
            if t >= next_eval:
                record()
                next_eval += config.run.eval_interval
            eps = epsilon_at(t, cfg_tr)
            ep, _ = rollout(env, learner, int(env_rng.integers(0, 2**31 - 1)), ctrl.e_l, eps, explore_rng)
            t += ep.length
            episodes += 1
            samples[: ep.length] += 1
            recent_returns.append(ep.ret)
            buffer.store_episode(ep)
            if len(buffer) > cfg_tr.learn_start:
                for _ in range(cfg_tr.updates_per_episode):
                    batch = buffer.sample_batch(cfg_tr.batch_size, sample_rng)
                    last_loss = learner.td_update(batch)
                    ctrl.observe(learner.last_q, learner.last_filled)
                if (t - t_p) > cfg_tr.target_update_interval:
                    learner.sync_targets()
                    t_p = t
        record()
    except NumericDivergence as e:
        runlog.diverged = True
        runlog.message = str(e)
        log.error("seed %d diverged at step %d: %s", seed, t, e)

    runlog.rng_states = _jsonable(
        {
            "env": env_rng.bit_generator.state,
            "explore": explore_rng.bit_generator.state,
            "sample": sample_rng.bit_generator.state,
        }
    )
    runlog.checksum = learner.checksum()
    return runlog


def _run_job(job: tuple[ExperimentConfig, int]) -> RunLog:
    return run_training(*job)


def run_parallel(jobs: list[tuple[ExperimentConfig, int]], workers: int = 1) -> list[RunLog]:
    """Independent (config, seed) runs, in order; ``workers > 1`` fans out over processes."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_training(cfg, seed) for cfg, seed in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


# ---------------------------------------------------------------- output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, list):
        return ";".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(runlog: RunLog, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS + [SCHEMA_COLUMN])
        for row in runlog.rows:
            writer.writerow([_cell(getattr(row, c)) for c in CSV_COLUMNS] + [""])
    return path


def read_csv(path: str | os.PathLike) -> list[MetricRow]:
    hints = get_type_hints(MetricRow)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if not header or header[-1] != SCHEMA_COLUMN:
            raise ValueError(f"{path}: expected metrics schema {SCHEMA_COLUMN}, header is {header}")
        records = list(reader)
    for rec in records:
        vals = {}
        for name in CSV_COLUMNS:
            raw = rec[name]
            hint = hints[name]
            if get_origin(hint) is list:
                vals[name] = [int(x) for x in raw.split(";")] if raw else []
            elif raw == "":
                vals[name] = None
            elif hint is int:
                vals[name] = int(raw)
            else:
                vals[name] = float(raw)
        rows.append(MetricRow(**vals))
    return rows


def emit_plot(runlog: RunLog, path: str | os.PathLike, width: int = 640, height: int = 360) -> Path:
    """SVG line chart: median test return (left axis) and E_L (right axis) vs step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pad = 50
    steps = [r.step for r in runlog.rows]
    ret = [r.test_return_median for r in runlog.rows]
    el = [r.e_l for r in runlog.rows]

    def scale(vals, lo_px, hi_px):
        finite = [v for v in vals if math.isfinite(v)]
        if not finite:
            return lambda v: lo_px
        lo, hi = min(finite), max(finite)
        span = hi - lo
        if not (math.isfinite(span) and span > 0):
            # flat or overflowing range: centre the line
            return lambda v: (lo_px + hi_px) / 2
        return lambda v: lo_px + (min(max(v, lo), hi) - lo) / span * (hi_px - lo_px)

    sx = scale(steps, pad, width - pad)
    sy_ret = scale(ret, height - pad, pad)
    sy_el = scale(el, height - pad, pad)

    def polyline(ys, sy, colour):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(steps, ys))
        return f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{pts}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{width - pad}" y1="{pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">training step</text>',
        f'<text x="12" y="{pad - 15}" font-size="12" fill="#1f77b4">median test return</text>',
        f'<text x="{width - 12}" y="{pad - 15}" text-anchor="end" font-size="12" fill="#d62728">episode length limit</text>',
    ]
    if steps:
        parts.append(polyline(ret, sy_ret, "#1f77b4"))
        parts.append(polyline(el, sy_el, "#d62728"))
        parts.append(f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{steps[0]}</text>')
        parts.append(
            f'<text x="{width - pad}" y="{height - pad + 15}" text-anchor="end" font-size="10">{steps[-1]}</text>'
        )
        parts.append(f'<text x="{pad - 4}" y="{pad}" text-anchor="end" font-size="10">{max(ret):.3g}</text>')
        parts.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{min(ret):.3g}</text>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad}" font-size="10">{max(el)}</text>')
        parts.append(f'<text x="{width - pad + 4}" y="{height - pad}" font-size="10">{min(el)}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


def write_run(runlog: RunLog, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runlog.json").write_text(runlog.to_json())
    (out / "config.cfg").write_text("".join(f"{k} = {v}\n" for k, v in runlog.config.items()))
    emit_csv(runlog, out / "metrics.csv")
    emit_plot(runlog, out / "plot.svg")
    return out


# --------------------------------------------------------------- summaries


def median_curve(logs: list[RunLog]) -> tuple[list[int], list[float]]:
    """Cross-seed median of test return at each shared evaluation row."""
    n = min(len(lg.rows) for lg in logs)
    steps = [int(np.median([lg.rows[i].step for lg in logs])) for i in range(n)]
    vals = [float(np.median([lg.rows[i].test_return_median for lg in logs])) for i in range(n)]
    return steps, vals


def first_step_reaching(steps: list[int], values: list[float], threshold: float) -> float:
    for s, v in zip(steps, values):
        if v >= threshold:
            return float(s)
    return math.inf
