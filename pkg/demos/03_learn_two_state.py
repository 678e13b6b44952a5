"""Train the discrete soft actor-critic on a two-state MDP and compare to the exact answer.

Takes about 15 seconds.
"""
import numpy as np

from sacd.envs import make_two_state
from sacd.runner import RunConfig, compare_to_oracle, run_training

np.set_printoptions(precision=4, suppress=True)

config = RunConfig(
    env="two_state",
    gamma=0.9,
    total_env_steps=30_000,
    alpha_mode="fixed",
    initial_alpha=0.2,
    target_update={"mode": "polyak", "tau": 0.005},
    eval_interval=0,
    seed=0,
)
checkpoint, metrics = run_training(config)

losses = [(r["step"], r["q1_loss"]) for r in metrics if "q1_loss" in r]
for step, q1 in losses[:: len(losses) // 6]:
    print(f"step {step:6d}  critic loss {q1:.2e}")

report = compare_to_oracle(checkpoint, make_two_state(gamma=0.9), alpha=0.2)
print("\nagent policy:\n", np.array(report["agent_policy"]))
print("soft-optimal policy:\n", np.array(report["oracle_policy"]))
print("max total variation %.2e, objective gap %.2e" % (report["max_tv"], report["objective_gap"]))
