"""Finite MDPs and a simulator that steps through them.

Every environment here is backed by an explicit :class:`MdpSpec`, so the
same object drives both the simulator and the tabular solver in
:mod:`sacd.oracle`.  Observations are one-hot state encodings.

MdpSpec files are JSON with keys ``format``, ``version``, ``n_states``,
``n_actions``, ``gamma``, ``transition`` (flat, row-major over
``[s][a][s']``), ``reward`` (flat over ``[s][a]``), ``terminal`` and
``start_distribution``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MDP_FORMAT = "sacd-mdp"
MDP_VERSION = 1
ROW_TOL = 1e-12

UP, DOWN, LEFT, RIGHT = range(4)


@dataclass(eq=False)
class MdpSpec:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    terminal: np.ndarray  # (S,) bool
    start_distribution: np.ndarray  # (S,)
    gamma: float

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.start_distribution = np.asarray(self.start_distribution, dtype=np.float64)
        self.gamma = float(self.gamma)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def validate(self) -> None:
        P, R = self.transition, self.reward
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if R.shape != (S, A):
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape}")
        if self.terminal.shape != (S,) or self.start_distribution.shape != (S,):
            raise ValueError("terminal and start_distribution need one entry per state")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValueError("every transition row P[s][a] must be a probability vector")
        d = self.start_distribution
        if np.any(d < 0) or abs(d.sum() - 1.0) > ROW_TOL:
            raise ValueError("start_distribution must sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for s in np.flatnonzero(self.terminal):
            if not np.all(P[s, :, s] == 1.0) or np.any(R[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")

    def one_hot(self, state: int) -> np.ndarray:
        obs = np.zeros(self.n_states)
        obs[state] = 1.0
        return obs

    def to_dict(self) -> dict:
        return {
            "format": MDP_FORMAT,
            "version": MDP_VERSION,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "terminal": self.terminal.tolist(),
            "start_distribution": self.start_distribution.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        if d.get("format") != MDP_FORMAT or d.get("version") != MDP_VERSION:
            raise ValueError(f"not a {MDP_FORMAT} v{MDP_VERSION} document")
        S, A = int(d["n_states"]), int(d["n_actions"])
        return cls(
            transition=np.array(d["transition"], dtype=np.float64).reshape(S, A, S),
            reward=np.array(d["reward"], dtype=np.float64).reshape(S, A),
            terminal=d["terminal"],
            start_distribution=d["start_distribution"],
            gamma=d["gamma"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "MdpSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def clip_reward(r: float) -> float:
    return min(max(float(r), -1.0), 1.0)


class Env:
    """Simulator over an :class:`MdpSpec`.

    ``step`` returns ``(obs, reward, terminated, truncated)``.  ``truncated``
    marks the step limit and must not cut the bootstrap term of a critic
    target; only ``terminated`` does.
    """

    def __init__(self, mdp: MdpSpec, step_limit: int = 200, reward_clip: bool = False):
        if step_limit < 1:
            raise ValueError("step_limit must be positive")
        self.mdp = mdp
        self.step_limit = step_limit
        self.reward_clip = reward_clip
        self.state: int | None = None
        self.steps = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = int(rng.choice(self.mdp.n_states, p=self.mdp.start_distribution))
        self.steps = 0
        self.done = False
        return self.mdp.one_hot(self.state)

    def step(self, action: int, rng: np.random.Generator):
        if self.done:
            raise RuntimeError("step called on a finished episode; call reset first")
        if not 0 <= action < self.mdp.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.mdp.n_actions})")
        s = self.state
        reward = float(self.mdp.reward[s, action])
        if self.reward_clip:
            reward = clip_reward(reward)
        self.state = int(rng.choice(self.mdp.n_states, p=self.mdp.transition[s, action]))
        self.steps += 1
        terminated = bool(self.mdp.terminal[self.state])
        truncated = not terminated and self.steps >= self.step_limit
        self.done = terminated or truncated
        return self.mdp.one_hot(self.state), reward, terminated, truncated

    def state_dict(self) -> dict:
        return {"state": self.state, "steps": self.steps, "done": self.done}

    def load_state_dict(self, d: dict) -> None:
        self.state, self.steps, self.done = d["state"], int(d["steps"]), bool(d["done"])


# constructors


def make_gridworld(
    width: int = 5,
    height: int = 5,
    goal=(4, 4),
    traps=((1, 3), (3, 1)),
    step_penalty: float = -0.01,
    start=(0, 0),
    gamma: float = 0.99,
) -> MdpSpec:
    """Deterministic grid; cells are ``(row, col)`` with state ``row * width + col``.

    Actions are up/down/left/right.  Bumping a wall keeps the agent in place.
    Entering the goal pays ``1 + step_penalty``, a trap ``-1 + step_penalty``;
    both terminate.
    """
    if width * height < 2:
        raise ValueError("gridworld needs at least two cells")
    traps = [tuple(t) for t in traps]
    goal, start = tuple(goal), tuple(start)

    def inside(cell):
        return 0 <= cell[0] < height and 0 <= cell[1] < width

    for name, cell in [("goal", goal), ("start", start)] + [("trap", t) for t in traps]:
        if not inside(cell):
            raise ValueError(f"{name} {cell} outside {height}x{width} grid")
    if goal in traps:
        raise ValueError("goal may not coincide with a trap")
    if start == goal or start in traps:
        raise ValueError("start must be a non-terminal cell")

    S = width * height
    idx = lambda cell: cell[0] * width + cell[1]  # noqa: E731
    moves = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    terminal = np.zeros(S, dtype=bool)
    terminal[idx(goal)] = True
    for t in traps:
        terminal[idx(t)] = True
    for r in range(height):
        for c in range(width):
            s = idx((r, c))
            for a, (dr, dc) in moves.items():
                if terminal[s]:
                    P[s, a, s] = 1.0
                    continue
                nxt = (r + dr, c + dc)
                if not inside(nxt):
                    nxt = (r, c)
                P[s, a, idx(nxt)] = 1.0
                R[s, a] = step_penalty
                if nxt == goal:
                    R[s, a] += 1.0
                elif nxt in traps:
                    R[s, a] -= 1.0
    start_dist = np.zeros(S)
    start_dist[idx(start)] = 1.0
    return MdpSpec(P, R, terminal, start_dist, gamma)


def make_random_mdp(n_states: int, n_actions: int, rng: np.random.Generator, reward_scale: float = 1.0, gamma: float = 0.9) -> MdpSpec:
    if n_states < 2 or n_actions < 2:
        raise ValueError("random MDPs need at least 2 states and 2 actions")
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalise so rows sum to 1 to machine precision
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return MdpSpec(P, R, np.zeros(n_states, dtype=bool), np.full(n_states, 1.0 / n_states), gamma)


def make_chain(n_states: int = 5, slip: float = 0.0, gamma: float = 0.9) -> MdpSpec:
    """Chain with actions left/right; the right end pays 1 and terminates.

    With probability ``slip`` the move goes the other way.
    """
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    S = n_states
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    terminal = np.zeros(S, dtype=bool)
    terminal[-1] = True
    for s in range(S):
        if terminal[s]:
            P[s, :, s] = 1.0
            continue
        left, right = max(s - 1, 0), s + 1
        for a, (main, other) in enumerate([(left, right), (right, left)]):
            P[s, a, main] += 1.0 - slip
            P[s, a, other] += slip
            R[s, a] = (1.0 - slip if main == S - 1 else 0.0) + (slip if other == S - 1 else 0.0)
    start = np.zeros(S)
    start[0] = 1.0
    return MdpSpec(P, R, terminal, start, gamma)


def make_bandit(rewards=(1.0, 0.0)) -> MdpSpec:
    """Single state, every action loops back; ``gamma = 0``."""
    A = len(rewards)
    return MdpSpec(np.ones((1, A, 1)), np.array([rewards], dtype=float), [False], [1.0], 0.0)


def make_two_state(gamma: float = 0.9) -> MdpSpec:
    """Two states, action 0 stays put and action 1 switches, deterministically.

    Staying in state 1 pays the most, but getting there costs a step, so
    the soft-optimal policy at moderate temperature stays mixed in both
    states.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = 1.0
    P[1, 0, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.1, 0.0], [0.15, 0.0]])
    return MdpSpec(P, R, [False, False], [0.5, 0.5], gamma)


BUILTIN = {
    "bandit": make_bandit,
    "two_state": make_two_state,
    "chain": make_chain,
    "gridworld": make_gridworld,
}


def resolve_mdp(name_or_path: str) -> MdpSpec:
    """Built-in environment by name, otherwise an MdpSpec JSON file."""
    if name_or_path in BUILTIN:
        return BUILTIN[name_or_path]()
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"unknown environment {name_or_path!r}: not built in and no such file")
    return MdpSpec.load(path)
