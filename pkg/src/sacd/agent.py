"""Discrete-action soft actor-critic.

The critics map an observation to one Q-value per action and the policy
maps it to a full categorical distribution, so every expectation over
actions (soft state value, policy objective, temperature objective) is an
exact dot product with the policy's probabilities instead of a sampled
estimate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import (
    DTYPE,
    Adam,
    NonFiniteError,
    Tape,
    he_init,
    log_softmax,
    softmax,
    zeros_bias,
)
from .replay import Batch

LOG_PROB_FLOOR = -30.0
CHECKPOINT_FORMAT = "sacd-agent"
CHECKPOINT_VERSION = 1


class MLP:
    """Fully connected ReLU network with a linear output layer.

    Weights are stored ``(fan_in, fan_out)`` under ``W0, b0, W1, b1, ...``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        self.params: dict[str, np.ndarray] = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params[f"W{i}"] = he_init((fan_in, fan_out), rng) if rng is not None else np.zeros((fan_in, fan_out))
            self.params[f"b{i}"] = zeros_bias((fan_out,))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=DTYPE)
        if h.shape[-1] != self.sizes[0]:
            raise ValueError(f"input dimension {h.shape[-1]} does not match network input {self.sizes[0]}")
        p = self.params
        for i in range(self.n_layers):
            h = h @ p[f"W{i}"] + p[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.where(h > 0, h, 0.0)
        return h

    def build(self, tape: Tape, x, nodes: dict):
        """Same forward pass recorded on ``tape`` using param ``nodes``."""
        h = tape.const(x)
        for i in range(self.n_layers):
            h = tape.add(tape.matmul(h, nodes[f"W{i}"]), nodes[f"b{i}"])
            if i < self.n_layers - 1:
                h = tape.relu(h)
        return h

    def copy(self) -> "MLP":
        net = MLP(self.sizes)
        net.params = {k: v.copy() for k, v in self.params.items()}
        return net

    def state_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "layers": [
                {
                    name: {"shape": list(self.params[name].shape), "data": self.params[name].ravel().tolist()}
                    for name in (f"W{i}", f"b{i}")
                }
                for i in range(self.n_layers)
            ],
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "MLP":
        net = cls(d["sizes"])
        for layer in d["layers"]:
            for name, t in layer.items():
                net.params[name] = np.array(t["data"], dtype=DTYPE).reshape(t["shape"])
        return net


# distributions


def policy_distribution(net: MLP, obs):
    """``(probs, log_probs)`` of the policy at ``obs``; log-probs via log-softmax."""
    obs = np.asarray(obs, dtype=DTYPE)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite values")
    logits = net(obs)
    return softmax(logits), log_softmax(logits)


def sample_action(p, rng: np.random.Generator) -> int:
    p = np.asarray(p, dtype=DTYPE)
    # inverse CDF; the guard keeps rounding in the cumsum from picking a zero-probability tail
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, int(np.flatnonzero(p > 0)[-1]))


def greedy_action(p) -> int:
    return int(np.argmax(p))


def entropy(probs, log_probs) -> np.ndarray:
    return -np.sum(probs * log_probs, axis=-1)


def soft_state_value(p, q, alpha: float, log_p=None) -> np.ndarray:
    """``p . (q - alpha * log p)`` along the last axis.

    Pass ``log_p`` when it is available from a log-softmax; otherwise it is
    taken from ``p`` with zero-probability entries dropped.
    """
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    if log_p is None:
        with np.errstate(divide="ignore"):
            log_p = np.log(p)
    log_p = np.maximum(log_p, LOG_PROB_FLOOR)
    return np.sum(p * q, axis=-1) - alpha * np.sum(p * log_p, axis=-1)


# configuration and state


@dataclass
class TargetUpdate:
    """Hard copy every ``interval`` updates, or a polyak blend with rate ``tau``."""

    mode: str = "hard"
    interval: int = 1000
    tau: float = 0.005

    def __post_init__(self):
        if self.mode == "hard":
            if self.interval < 1:
                raise ValueError("hard target interval must be >= 1")
        elif self.mode == "polyak":
            if not 0.0 < self.tau <= 1.0:
                raise ValueError(f"polyak tau must lie in (0, 1], got {self.tau}")
        else:
            raise ValueError(f"unknown target update mode {self.mode!r}")


@dataclass
class Temperature:
    log_alpha: float
    target_entropy: float

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


class CriticPair:
    def __init__(self, sizes, rng: np.random.Generator):
        self.q1 = MLP(sizes, rng)
        self.q2 = MLP(sizes, rng)
        self.target1 = self.q1.copy()
        self.target2 = self.q2.copy()

    def min_local(self, obs) -> np.ndarray:
        return np.minimum(self.q1(obs), self.q2(obs))

    def min_target(self, obs) -> np.ndarray:
        return np.minimum(self.target1(obs), self.target2(obs))


def update_targets(critics: CriticPair, mode: TargetUpdate, step: int) -> bool:
    """Apply the target update for gradient step ``step``; True if targets moved."""
    pairs = [(critics.q1, critics.target1), (critics.q2, critics.target2)]
    if mode.mode == "hard":
        if step % mode.interval != 0:
            return False
        for local, target in pairs:
            target.params = {k: v.copy() for k, v in local.params.items()}
        return True
    tau = mode.tau
    for local, target in pairs:
        target.params = {k: tau * local.params[k] + (1.0 - tau) * target.params[k] for k in local.params}
    return True


# losses


def critic_targets(batch: Batch, critics: CriticPair, policy: MLP, alpha: float, gamma: float) -> np.ndarray:
    """Bootstrapped soft targets from the min of the two target critics.

    Only true terminals (``batch.dones``) drop the bootstrap term.
    """
    probs, log_probs = policy_distribution(policy, batch.next_obs)
    v_next = soft_state_value(probs, critics.min_target(batch.next_obs), alpha, log_probs)
    return batch.rewards + gamma * (1.0 - batch.dones) * v_next


def critic_loss_node(tape: Tape, net: MLP, nodes: dict, obs, actions, targets):
    q = net.build(tape, obs, nodes)
    td = tape.sub(tape.gather(q, actions), tape.const(targets))
    return tape.scale(tape.mean(tape.square(td)), 0.5)


def critic_loss(batch: Batch, critics: CriticPair, targets) -> tuple[float, float]:
    out = []
    for net in (critics.q1, critics.q2):
        q = net(batch.obs)[np.arange(len(batch)), batch.actions]
        out.append(float(np.mean(0.5 * (q - targets) ** 2)))
    return out[0], out[1]


def policy_loss_node(tape: Tape, net: MLP, nodes: dict, obs, q_values, alpha: float):
    """Batch mean of ``pi^T (alpha * log pi - Q)`` with ``Q`` held constant."""
    logits = net.build(tape, obs, nodes)
    probs = tape.softmax(logits)
    log_probs = tape.clip_min(tape.log_softmax(logits), LOG_PROB_FLOOR)
    inner = tape.sub(tape.scale(log_probs, alpha), tape.const(q_values))
    return tape.mean(tape.sum(tape.mul(probs, inner), axis=-1))


def policy_loss(batch: Batch, policy: MLP, critics: CriticPair, alpha: float) -> float:
    probs, log_probs = policy_distribution(policy, batch.obs)
    q = critics.min_local(batch.obs)
    return float(np.mean(np.sum(probs * (alpha * np.maximum(log_probs, LOG_PROB_FLOOR) - q), axis=-1)))


def temperature_loss_node(tape: Tape, alpha_node, entropies, target_entropy: float):
    """``mean(alpha * (H(pi) - target))``, equal to ``pi^T[-alpha (log pi + target)]``.

    ``alpha_node`` may be ``alpha`` itself or ``exp(log_alpha)``.
    """
    gap = tape.const(np.asarray(entropies, dtype=DTYPE) - target_entropy)
    return tape.mean(tape.mul(alpha_node, gap))


def temperature_loss(entropies, alpha: float, target_entropy: float) -> float:
    return float(alpha * np.mean(np.asarray(entropies) - target_entropy))


# agent


@dataclass
class AgentConfig:
    gamma: float = 0.99
    critic_lr: float = 3e-4
    policy_lr: float = 3e-4
    alpha_lr: float = 3e-4
    target_update: TargetUpdate = None
    autotune_alpha: bool = True
    initial_alpha: float = 1.0
    policy_q_source: str = "local"

    def __post_init__(self):
        if self.target_update is None:
            self.target_update = TargetUpdate()
        elif isinstance(self.target_update, dict):
            self.target_update = TargetUpdate(**self.target_update)
        if self.policy_q_source not in ("local", "target"):
            raise ValueError("policy_q_source must be 'local' or 'target'")
        if self.initial_alpha <= 0:
            raise ValueError("initial_alpha must be positive")


class SACDiscrete:
    """Policy, twin critics with targets, temperature and their optimisers."""

    def __init__(self, obs_dim: int, n_actions: int, hidden, target_entropy: float, config: AgentConfig, rng: np.random.Generator):
        sizes = [obs_dim, *hidden, n_actions]
        self.config = config
        self.policy = MLP(sizes, rng)
        self.critics = CriticPair(sizes, rng)
        self.temperature = Temperature(float(np.log(config.initial_alpha)), float(target_entropy))
        self.policy_opt = Adam(config.policy_lr)
        self.q1_opt = Adam(config.critic_lr)
        self.q2_opt = Adam(config.critic_lr)
        self.alpha_opt = Adam(config.alpha_lr)
        self.updates = 0

    @property
    def n_actions(self) -> int:
        return self.policy.sizes[-1]

    @property
    def alpha(self) -> float:
        return self.temperature.alpha

    def distribution(self, obs):
        return policy_distribution(self.policy, obs)

    def act(self, obs, rng: np.random.Generator, greedy: bool = False) -> int:
        probs, _ = self.distribution(obs)
        return greedy_action(probs) if greedy else sample_action(probs, rng)

    def update(self, batch: Batch) -> dict:
        """One gradient step: critics, policy, temperature, then targets.

        On a non-finite loss the agent is restored to its pre-update state
        and :class:`NonFiniteError` names the loss.
        """
        # optimisers and target updates rebind arrays, so shallow copies suffice
        nets = [self.policy, self.critics.q1, self.critics.q2, self.critics.target1, self.critics.target2]
        opts = [self.policy_opt, self.q1_opt, self.q2_opt, self.alpha_opt]
        saved = ([dict(n.params) for n in nets], [dict(o.states) for o in opts], self.temperature.log_alpha, self.updates)
        try:
            return self._update(batch)
        except NonFiniteError:
            for n, params in zip(nets, saved[0]):
                n.params = params
            for o, states in zip(opts, saved[1]):
                o.states = states
            self.temperature.log_alpha, self.updates = saved[2], saved[3]
            raise

    def _update(self, batch: Batch) -> dict:
        cfg = self.config
        alpha = self.alpha
        metrics = {}

        y = critic_targets(batch, self.critics, self.policy, alpha, cfg.gamma)
        for key, net, opt in (("q1_loss", self.critics.q1, self.q1_opt), ("q2_loss", self.critics.q2, self.q2_opt)):
            tape = Tape()
            nodes = {k: tape.param(v, k) for k, v in net.params.items()}
            loss = critic_loss_node(tape, net, nodes, batch.obs, batch.actions, y)
            metrics[key] = _finite(key, loss.value)
            opt.step(net.params, tape.backward(loss))

        q = self.critics.min_local(batch.obs) if cfg.policy_q_source == "local" else self.critics.min_target(batch.obs)
        tape = Tape()
        nodes = {k: tape.param(v, k) for k, v in self.policy.params.items()}
        loss = policy_loss_node(tape, self.policy, nodes, batch.obs, q, alpha)
        metrics["policy_loss"] = _finite("policy_loss", loss.value)
        logits = self.policy(batch.obs)
        entropies = entropy(softmax(logits), log_softmax(logits))
        self.policy_opt.step(self.policy.params, tape.backward(loss))

        tape = Tape()
        log_alpha = tape.param(self.temperature.log_alpha, "log_alpha")
        loss = temperature_loss_node(tape, tape.exp(log_alpha), entropies, self.temperature.target_entropy)
        metrics["alpha_loss"] = _finite("alpha_loss", loss.value)
        if cfg.autotune_alpha:
            params = {"log_alpha": np.asarray(self.temperature.log_alpha, dtype=DTYPE)}
            self.alpha_opt.step(params, tape.backward(loss))
            self.temperature.log_alpha = float(params["log_alpha"])

        self.updates += 1
        update_targets(self.critics, cfg.target_update, self.updates)
        metrics["alpha"] = self.alpha
        metrics["policy_entropy"] = float(np.mean(entropies))
        return metrics

    # checkpointing

    def state_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": cfg,
            "networks": {
                "policy": self.policy.state_dict(),
                "q1": self.critics.q1.state_dict(),
                "q2": self.critics.q2.state_dict(),
                "target1": self.critics.target1.state_dict(),
                "target2": self.critics.target2.state_dict(),
            },
            "log_alpha": self.temperature.log_alpha,
            "target_entropy": self.temperature.target_entropy,
            "adam": {
                "policy": self.policy_opt.state_dict(),
                "q1": self.q1_opt.state_dict(),
                "q2": self.q2_opt.state_dict(),
                "alpha": self.alpha_opt.state_dict(),
            },
            "updates": self.updates,
        }

    def load_state_dict(self, d: dict) -> None:
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
        nets = d["networks"]
        self.config = AgentConfig(**d["config"])
        self.policy = MLP.from_state_dict(nets["policy"])
        self.critics.q1 = MLP.from_state_dict(nets["q1"])
        self.critics.q2 = MLP.from_state_dict(nets["q2"])
        self.critics.target1 = MLP.from_state_dict(nets["target1"])
        self.critics.target2 = MLP.from_state_dict(nets["target2"])
        self.temperature = Temperature(float(d["log_alpha"]), float(d["target_entropy"]))
        self.policy_opt = Adam.from_state_dict(d["adam"]["policy"])
        self.q1_opt = Adam.from_state_dict(d["adam"]["q1"])
        self.q2_opt = Adam.from_state_dict(d["adam"]["q2"])
        self.alpha_opt = Adam.from_state_dict(d["adam"]["alpha"])
        self.updates = int(d["updates"])

    @classmethod
    def from_state_dict(cls, d: dict) -> "SACDiscrete":
        sizes = d["networks"]["policy"]["sizes"]
        cfg = AgentConfig(**d["config"])
        agent = cls(sizes[0], sizes[-1], sizes[1:-1], d["target_entropy"], cfg, np.random.default_rng(0))
        agent.load_state_dict(d)
        return agent


def _finite(name: str, value) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} is not finite ({value})")
    return value


def loss_gradient_errors(rng: np.random.Generator, batch_size: int = 16, obs_dim: int = 5, n_actions: int = 3, hidden=(16, 16), eps: float = 1e-5) -> dict:
    """Max relative autodiff-vs-central-difference error of each loss on one random batch."""
    from .diffcore import gradient_check

    sizes = [obs_dim, *hidden, n_actions]
    critic, policy = MLP(sizes, rng), MLP(sizes, rng)
    obs = rng.uniform(-2, 2, size=(batch_size, obs_dim))
    actions = rng.integers(0, n_actions, batch_size)
    targets = rng.normal(size=batch_size)
    q_values = rng.normal(size=(batch_size, n_actions))
    alpha = float(rng.uniform(0.05, 2.0))
    entropies = rng.uniform(0, np.log(n_actions), size=batch_size)
    target_entropy = 0.98 * np.log(n_actions)
    return {
        "critic": gradient_check(
            lambda t, n: critic_loss_node(t, critic, n, obs, actions, targets), critic.params, eps
        ),
        "policy": gradient_check(
            lambda t, n: policy_loss_node(t, policy, n, obs, q_values, alpha), policy.params, eps
        ),
        "temperature": gradient_check(
            lambda t, n: temperature_loss_node(t, t.exp(n["log_alpha"]), entropies, target_entropy),
            {"log_alpha": np.array(np.log(alpha))},
            eps,
        ),
    }
