"""Training loop, evaluation, checkpoints and the agent-vs-oracle report."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import oracle
from .agent import AgentConfig, SACDiscrete, TargetUpdate, greedy_action, sample_action
from .diffcore import NonFiniteError
from .envs import Env, MdpSpec, resolve_mdp
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step",
    "episode_return",
    "eval_return",
    "q1_loss",
    "q2_loss",
    "policy_loss",
    "alpha_loss",
    "alpha",
    "policy_entropy",
    "buffer_size",
)
RUN_FORMAT = "sacd-run"
RUN_VERSION = 1
RNG_STREAMS = ("init", "env", "action", "replay", "eval")


class TrainingAborted(RuntimeError):
    pass


def compute_entropy_target(n_actions: int, coefficient: float = 0.98) -> float:
    """``coefficient * -log(1 / n_actions)``."""
    if n_actions < 2:
        raise ValueError("entropy target needs at least 2 actions")
    if not 0.0 < coefficient <= 1.0:
        raise ValueError("coefficient must lie in (0, 1]")
    return coefficient * -math.log(1.0 / n_actions)


@dataclass
class RunConfig:
    env: str = "gridworld"
    seed: int = 0
    total_env_steps: int = 50_000
    gamma: float = 0.99
    learning_rate: float = 3e-4
    alpha_learning_rate: float | None = None
    batch_size: int = 64
    buffer_capacity: int = 100_000
    initial_random_steps: int = 1_000
    steps_per_learning_update: int = 4
    learning_iterations_per_round: int = 1
    target_update: dict = field(default_factory=lambda: {"mode": "hard", "interval": 1000})
    entropy_target_coefficient: float = 0.98
    hidden_layer_sizes: list = field(default_factory=lambda: [64, 64])
    alpha_mode: str = "auto"
    initial_alpha: float = 1.0
    policy_q_source: str = "local"
    eval_interval: int = 5_000
    eval_episodes: int = 10
    eval_mode: str = "greedy"
    reward_clip: bool = False
    episode_step_limit: int = 200

    def __post_init__(self):
        positive = (
            "total_env_steps", "learning_rate", "batch_size", "buffer_capacity",
            "steps_per_learning_update", "learning_iterations_per_round",
            "eval_episodes", "episode_step_limit", "initial_alpha",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.initial_random_steps < 0 or self.eval_interval < 0:
            raise ValueError("initial_random_steps and eval_interval must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.entropy_target_coefficient <= 1.0:
            raise ValueError("entropy_target_coefficient must lie in (0, 1]")
        if self.alpha_mode not in ("auto", "fixed"):
            raise ValueError("alpha_mode must be 'auto' or 'fixed'")
        if self.eval_mode not in ("greedy", "sampled"):
            raise ValueError("eval_mode must be 'greedy' or 'sampled'")
        TargetUpdate(**self.target_update)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        d = json.loads(Path(path).read_text())
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma,
            critic_lr=self.learning_rate,
            policy_lr=self.learning_rate,
            alpha_lr=self.alpha_learning_rate or self.learning_rate,
            target_update=TargetUpdate(**self.target_update),
            autotune_alpha=self.alpha_mode == "auto",
            initial_alpha=self.initial_alpha,
            policy_q_source=self.policy_q_source,
        )


def _as_agent(agent_or_checkpoint) -> SACDiscrete:
    if isinstance(agent_or_checkpoint, SACDiscrete):
        return agent_or_checkpoint
    d = agent_or_checkpoint
    if isinstance(d, (str, Path)):
        d = json.loads(Path(d).read_text())
    if d.get("format") == RUN_FORMAT:
        d = d["agent"]
    return SACDiscrete.from_state_dict(d)


def evaluate(agent_or_checkpoint, env: Env | MdpSpec, episodes: int, mode: str = "greedy", rng=None, step_limit: int = 200):
    """Mean and std of undiscounted episode return; no learning, no replay."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    agent = _as_agent(agent_or_checkpoint)
    if isinstance(env, MdpSpec):
        env = Env(env, step_limit)
    else:
        env = Env(env.mdp, env.step_limit, env.reward_clip)
    rng = rng if rng is not None else np.random.default_rng()
    returns = []
    for _ in range(episodes):
        obs = env.reset(rng)
        total, done = 0.0, False
        while not done:
            probs, _ = agent.distribution(obs)
            a = greedy_action(probs) if mode == "greedy" else sample_action(probs, rng)
            obs, r, terminated, truncated = env.step(a, rng)
            total += r
            done = terminated or truncated
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


class Trainer:
    """One seeded run: owns the environment, replay buffer and agent."""

    def __init__(self, config: RunConfig, mdp: MdpSpec | None = None):
        self.config = config
        self.mdp = mdp if mdp is not None else resolve_mdp(config.env)
        self.env = Env(self.mdp, config.episode_step_limit, config.reward_clip)
        streams = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, streams)}
        target = compute_entropy_target(self.mdp.n_actions, config.entropy_target_coefficient)
        self.agent = SACDiscrete(
            self.mdp.n_states, self.mdp.n_actions, config.hidden_layer_sizes,
            target, config.agent_config(), self.rngs["init"],
        )
        self.buffer = ReplayBuffer(min(config.buffer_capacity, max(config.total_env_steps, 1)), self.mdp.n_states)
        self.step = 0
        self.obs = self.env.reset(self.rngs["env"])
        self.episode_return = 0.0
        self.metrics: list[dict] = []

    def _select_action(self) -> int:
        rng = self.rngs["action"]
        if self.step <= self.config.initial_random_steps:
            return int(rng.integers(self.mdp.n_actions))
        probs, _ = self.agent.distribution(self.obs)
        return sample_action(probs, rng)

    def run(self, until: int | None = None) -> list[dict]:
        """Advance to env step ``until`` (default: the configured total)."""
        cfg = self.config
        until = cfg.total_env_steps if until is None else min(until, cfg.total_env_steps)
        while self.step < until:
            self.step += 1
            row = {}
            action = self._select_action()
            next_obs, reward, terminated, truncated = self.env.step(action, self.rngs["env"])
            self.buffer.push(Transition(self.obs, action, reward, next_obs, terminated))
            self.episode_return += reward
            self.obs = next_obs
            if terminated or truncated:
                row["episode_return"] = self.episode_return
                self.episode_return = 0.0
                self.obs = self.env.reset(self.rngs["env"])

            learn = (
                self.step > cfg.initial_random_steps
                and self.step % cfg.steps_per_learning_update == 0
                and len(self.buffer) >= cfg.batch_size
            )
            if learn:
                for _ in range(cfg.learning_iterations_per_round):
                    batch = self.buffer.sample_batch(cfg.batch_size, self.rngs["replay"])
                    row.update(self.agent.update(batch))
            if cfg.eval_interval and self.step % cfg.eval_interval == 0:
                row["eval_return"], _ = evaluate(
                    self.agent, self.env, cfg.eval_episodes, cfg.eval_mode, self.rngs["eval"]
                )
            if row:
                row["step"] = self.step
                row.setdefault("alpha", self.agent.alpha)
                row["buffer_size"] = len(self.buffer)
                self.metrics.append(row)
        return self.metrics

    def gradient_steps(self) -> int:
        return self.agent.updates

    # checkpointing

    def state_dict(self) -> dict:
        return {
            "format": RUN_FORMAT,
            "version": RUN_VERSION,
            "config": self.config.to_dict(),
            "mdp": self.mdp.to_dict(),
            "agent": self.agent.state_dict(),
            "buffer": self.buffer.state_dict(),
            "env": self.env.state_dict(),
            "rngs": {name: rng.bit_generator.state for name, rng in self.rngs.items()},
            "step": self.step,
            "obs": self.obs.tolist(),
            "episode_return": self.episode_return,
            "metrics": self.metrics,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Trainer":
        if d.get("format") != RUN_FORMAT or d.get("version") != RUN_VERSION:
            raise ValueError(f"not a {RUN_FORMAT} v{RUN_VERSION} checkpoint")
        trainer = cls(RunConfig.from_dict(d["config"]), MdpSpec.from_dict(d["mdp"]))
        trainer.agent.load_state_dict(d["agent"])
        trainer.buffer = ReplayBuffer.from_state_dict(d["buffer"])
        trainer.env.load_state_dict(d["env"])
        for name, state in d["rngs"].items():
            trainer.rngs[name].bit_generator.state = state
        trainer.step = int(d["step"])
        trainer.obs = np.array(d["obs"], dtype=np.float64)
        trainer.episode_return = float(d["episode_return"])
        trainer.metrics = [dict(row) for row in d["metrics"]]
        return trainer

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()))

    @classmethod
    def load(cls, path) -> "Trainer":
        return cls.from_state_dict(json.loads(Path(path).read_text()))


def metrics_csv(metrics: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in metrics:
        writer.writerow(["" if row.get(c) is None else repr(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_metrics(metrics: list[dict], path) -> None:
    Path(path).write_text(metrics_csv(metrics))


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            row = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                elif key in ("step", "buffer_size"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def run_training(config: RunConfig, out_dir=None, resume_from=None):
    """Run to ``config.total_env_steps`` and return ``(checkpoint, metrics)``.

    With ``out_dir`` the metrics go to ``metrics.csv`` and the run state to
    ``final.ckpt``.  On a non-finite loss the last good state is written to
    ``last_good.ckpt`` and :class:`TrainingAborted` is raised.
    """
    trainer = Trainer.load(resume_from) if resume_from else Trainer(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        trainer.run()
    except NonFiniteError as exc:
        if out is not None:
            trainer.save(out / "last_good.ckpt")
            write_metrics(trainer.metrics, out / "metrics.csv")
        raise TrainingAborted(f"step {trainer.step}: {exc}") from exc
    checkpoint = trainer.state_dict()
    if out is not None:
        write_metrics(trainer.metrics, out / "metrics.csv")
        (out / "final.ckpt").write_text(json.dumps(checkpoint))
    log.info("finished %d env steps, %d gradient steps", trainer.step, trainer.gradient_steps())
    return checkpoint, trainer.metrics


def agent_policy_table(agent_or_checkpoint, n_states: int) -> np.ndarray:
    agent = _as_agent(agent_or_checkpoint)
    probs, _ = agent.distribution(np.eye(n_states))
    return probs


def compare_to_oracle(agent_or_checkpoint, mdp: MdpSpec, alpha: float | None = None) -> dict:
    """Per-state total variation to the soft-optimal policy and the objective gap.

    ``alpha=None`` uses the agent's own current temperature.
    """
    if not isinstance(mdp, MdpSpec):
        raise TypeError("compare_to_oracle needs a tabular MdpSpec")
    agent = _as_agent(agent_or_checkpoint)
    if agent.policy.sizes[0] != mdp.n_states or agent.n_actions != mdp.n_actions:
        raise ValueError("agent was not built for this MDP")
    alpha = agent.alpha if alpha is None else float(alpha)
    solution = oracle.soft_policy_iteration(mdp, alpha)
    agent_pi = agent_policy_table(agent, mdp.n_states)
    tv = np.where(mdp.terminal, 0.0, oracle.total_variation(agent_pi, solution.policy))
    j_oracle = oracle.objective(solution.policy, mdp, alpha)
    j_agent = oracle.objective(agent_pi, mdp, alpha)
    return {
        "alpha": alpha,
        "per_state_tv": tv.tolist(),
        "max_tv": float(tv.max()),
        "oracle_objective": j_oracle,
        "agent_objective": j_agent,
        "objective_gap": j_oracle - j_agent,
        "oracle_policy": solution.policy.tolist(),
        "agent_policy": agent_pi.tolist(),
    }
