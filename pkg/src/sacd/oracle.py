"""Exact tabular maximum-entropy solvers.

Soft Q-functions are ``(S, A)`` arrays, tabular policies ``(S, A)``
row-stochastic arrays.  Terminal states have zero value and contribute no
entropy bonus.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import logsumexp, softmax
from .envs import MdpSpec

ORACLE_FORMAT = "sacd-oracle"
ORACLE_VERSION = 1


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def soft_values(Q: np.ndarray, alpha: float) -> np.ndarray:
    """``alpha * logsumexp(Q / alpha)`` per state: the soft value at the softmax policy."""
    return alpha * logsumexp(np.asarray(Q) / alpha, axis=1)


def soft_backup(Q: np.ndarray, mdp: MdpSpec, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("soft_backup needs alpha > 0")
    V = np.where(mdp.terminal, 0.0, soft_values(Q, alpha))
    out = mdp.reward + mdp.gamma * mdp.transition @ V
    out[mdp.terminal] = 0.0
    return out


def bellman_backup(Q: np.ndarray, mdp: MdpSpec) -> np.ndarray:
    """Standard hard-max backup."""
    V = np.where(mdp.terminal, 0.0, np.max(Q, axis=1))
    out = mdp.reward + mdp.gamma * mdp.transition @ V
    out[mdp.terminal] = 0.0
    return out


def _iterate(backup, mdp: MdpSpec, tol: float, max_iters: int, residuals: list | None):
    # returns the Q whose own backup moved it by less than tol, plus the
    # number of backups that produced it
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    residual = np.inf
    for it in range(max_iters + 1):
        Q_next = backup(Q)
        residual = float(np.max(np.abs(Q_next - Q)))
        if residuals is not None:
            residuals.append(residual)
        if residual < tol:
            return Q, it
        Q = Q_next
    raise ConvergenceError(f"no convergence in {max_iters} iterations", residual)


def soft_value_iteration(mdp: MdpSpec, alpha: float, tol: float = 1e-10, max_iters: int = 10**6, residuals: list | None = None):
    """Iterate the soft backup from ``Q = 0`` until ``|TQ - Q|`` is below ``tol``.

    Returns ``(Q, iterations)`` where ``iterations`` counts the backups
    applied to reach ``Q``.  Pass a list as ``residuals`` to record the
    per-iteration sup-norm changes.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _iterate(lambda Q: soft_backup(Q, mdp, alpha), mdp, tol, max_iters, residuals)


def value_iteration(mdp: MdpSpec, tol: float = 1e-10, max_iters: int = 10**6):
    return _iterate(lambda Q: bellman_backup(Q, mdp), mdp, tol, max_iters, None)


def policy_improvement(Q: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("policy_improvement needs alpha > 0")
    return softmax(np.asarray(Q) / alpha)


def policy_entropy(pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def exact_policy_evaluation(pi: np.ndarray, mdp: MdpSpec, alpha: float):
    """Solve the soft Bellman equations of ``pi`` as one linear system.

    Returns ``(Q, V)``; ``mdp.start_distribution @ V`` is the discounted
    maximum-entropy objective of ``pi``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {pi.shape} does not match MDP")
    live = ~mdp.terminal
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition) * live[:, None]
    r_pi = (np.sum(pi * mdp.reward, axis=1) + alpha * policy_entropy(pi)) * live
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi
    try:
        V = np.linalg.solve(A, r_pi)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"policy evaluation system is singular: {exc}") from exc
    Q = mdp.reward + mdp.gamma * mdp.transition @ V
    Q[mdp.terminal] = 0.0
    return Q, V


def objective(pi: np.ndarray, mdp: MdpSpec, alpha: float) -> float:
    """Start-distribution-weighted soft value of ``pi``."""
    return float(mdp.start_distribution @ exact_policy_evaluation(pi, mdp, alpha)[1])


@dataclass
class PolicyIterationResult:
    policy: np.ndarray
    Q: np.ndarray
    iterations: int
    objectives: list = field(default_factory=list)


def soft_policy_iteration(mdp: MdpSpec, alpha: float, tol: float = 1e-10, max_iters: int = 10_000, initial_policy=None) -> PolicyIterationResult:
    """Alternate exact evaluation and softmax improvement from the uniform policy.

    Stops once the max-norm change of the policy drops below ``tol``.
    ``objectives`` records the objective of every evaluated policy.
    """
    pi = (
        np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
        if initial_policy is None
        else np.asarray(initial_policy, dtype=np.float64)
    )
    objectives = []
    change = np.inf
    for it in range(1, max_iters + 1):
        Q, V = exact_policy_evaluation(pi, mdp, alpha)
        objectives.append(float(mdp.start_distribution @ V))
        new_pi = policy_improvement(Q, alpha)
        change = float(np.max(np.abs(new_pi - pi)))
        pi = new_pi
        if change < tol:
            Q, V = exact_policy_evaluation(pi, mdp, alpha)
            objectives.append(float(mdp.start_distribution @ V))
            return PolicyIterationResult(pi, Q, it, objectives)
    raise ConvergenceError(f"policy iteration did not converge in {max_iters} rounds", change)


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.abs(np.asarray(p) - np.asarray(q)), axis=-1)


def save_solution(path, mdp: MdpSpec, alpha: float, Q: np.ndarray, pi: np.ndarray, residual: float, iterations: int) -> dict:
    doc = {
        "format": ORACLE_FORMAT,
        "version": ORACLE_VERSION,
        "alpha": alpha,
        "gamma": mdp.gamma,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "iterations": iterations,
        "residual": residual,
        "objective": objective(pi, mdp, alpha),
        "Q": np.asarray(Q).ravel().tolist(),
        "policy": np.asarray(pi).ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))
    return doc


def load_solution(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != ORACLE_FORMAT:
        raise ValueError(f"{path} is not an oracle solution file")
    shape = (doc["n_states"], doc["n_actions"])
    doc["Q"] = np.array(doc["Q"]).reshape(shape)
    doc["policy"] = np.array(doc["policy"]).reshape(shape)
    return doc
