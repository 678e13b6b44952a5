"""Exact soft-optimal control on small MDPs, no learning involved."""
import numpy as np

from sacd import oracle
from sacd.envs import make_bandit, make_gridworld, make_two_state

np.set_printoptions(precision=4, suppress=True)

# A two-armed bandit: arm 0 pays 1, arm 1 pays 0.  The soft-optimal policy is
# a Boltzmann distribution over the rewards, and the temperature sets how soft.
bandit = make_bandit()
for alpha in (0.1, 1.0, 10.0):
    res = oracle.soft_policy_iteration(bandit, alpha)
    print(f"bandit  alpha={alpha:<5} policy={res.policy[0]}  objective={oracle.objective(res.policy, bandit, alpha):.4f}")

# Two states, two actions: stay or switch.  Value iteration and policy
# iteration land on the same answer.
mdp = make_two_state(gamma=0.9)
Q_vi, iters = oracle.soft_value_iteration(mdp, 0.2)
res = oracle.soft_policy_iteration(mdp, 0.2)
print("\ntwo-state Q (value iteration, %d backups):\n%s" % (iters, Q_vi))
print("policy:\n%s" % res.policy)
print("max |Q_vi - Q_pi| = %.2e" % np.max(np.abs(Q_vi - res.Q)))
print("objective per policy-iteration round:", np.round(res.objectives, 6))

# The gridworld with a tiny temperature: the soft policy is nearly greedy.
grid = make_gridworld()
Q, _ = oracle.soft_value_iteration(grid, 1e-3)
arrows = np.array(list("^v<>"))[np.argmax(Q, axis=1)]
arrows[grid.terminal] = "."
print("\ngreedy gridworld policy (row 0 at top):")
print("\n".join(" ".join(row) for row in arrows.reshape(5, 5)))

uniform = np.full((grid.n_states, grid.n_actions), 0.25)
print("uniform policy value at the start: %.4f" % oracle.objective(uniform, grid, 0.0))
