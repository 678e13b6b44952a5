import json
import math

import numpy as np
import pytest

from sacd import cli
from sacd.agent import MLP
from sacd.envs import make_bandit, make_chain, make_gridworld
from sacd.runner import (
    METRIC_COLUMNS,
    RunConfig,
    Trainer,
    compare_to_oracle,
    compute_entropy_target,
    evaluate,
    metrics_csv,
    read_metrics,
    run_training,
)

FAST = dict(
    env="chain",
    total_env_steps=400,
    initial_random_steps=50,
    batch_size=16,
    hidden_layer_sizes=[8, 8],
    eval_interval=100,
    eval_episodes=2,
    episode_step_limit=30,
    target_update={"mode": "polyak", "tau": 0.01},
)


def fast_config(**overrides) -> RunConfig:
    return RunConfig.from_dict({**FAST, **overrides})


class TestEntropyTarget:
    @pytest.mark.parametrize("n", [2, 4, 6, 18])
    def test_values(self, n):
        assert compute_entropy_target(n) == pytest.approx(0.98 * math.log(n), abs=1e-12)

    def test_single_action_rejected(self):
        with pytest.raises(ValueError):
            compute_entropy_target(1)


class TestRunConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            RunConfig.from_dict({"learnig_rate": 1e-3})

    @pytest.mark.parametrize("bad", [{"gamma": 1.0}, {"batch_size": 0}, {"alpha_mode": "adaptive"}, {"target_update": {"mode": "soft"}}])
    def test_invalid_values(self, bad):
        with pytest.raises(ValueError):
            RunConfig.from_dict(bad)

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"env": "bandit", "seed": 3}))
        cfg = RunConfig.load(path, seed=7, env=None)
        assert cfg.env == "bandit" and cfg.seed == 7

    def test_round_trip(self):
        cfg = fast_config(seed=5)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg


class TestTrainer:
    def test_header_is_frozen(self):
        _, metrics = run_training(fast_config(total_env_steps=60))
        assert metrics_csv(metrics).splitlines()[0] == ",".join(METRIC_COLUMNS)
        assert METRIC_COLUMNS == (
            "step", "episode_return", "eval_return", "q1_loss", "q2_loss",
            "policy_loss", "alpha_loss", "alpha", "policy_entropy", "buffer_size",
        )

    def test_warmup_longer_than_run(self):
        trainer = Trainer(fast_config(total_env_steps=40, initial_random_steps=100, eval_interval=20))
        metrics = trainer.run()
        assert trainer.gradient_steps() == 0
        assert metrics and not any("q1_loss" in row for row in metrics)
        assert [r["step"] for r in metrics if "eval_return" in r] == [20, 40]

    @pytest.mark.parametrize("k,iters", [(1, 1), (4, 1), (3, 2)])
    def test_update_cadence(self, k, iters):
        cfg = fast_config(total_env_steps=200, steps_per_learning_update=k, learning_iterations_per_round=iters)
        trainer = Trainer(cfg)
        trainer.run()
        rounds = sum(1 for t in range(cfg.initial_random_steps + 1, 201) if t % k == 0 and t >= cfg.batch_size)
        assert trainer.gradient_steps() == rounds * iters

    def test_same_seed_same_bytes(self, tmp_path):
        run_training(fast_config(seed=4), tmp_path / "a")
        run_training(fast_config(seed=4), tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_different_seeds_differ(self):
        _, a = run_training(fast_config(seed=1))
        _, b = run_training(fast_config(seed=2))
        assert metrics_csv(a) != metrics_csv(b)

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = fast_config(seed=9)
        _, straight = run_training(cfg)
        first = Trainer(cfg)
        first.run(until=170)
        first.save(tmp_path / "mid.ckpt")
        resumed = Trainer.load(tmp_path / "mid.ckpt")
        assert metrics_csv(resumed.run()) == metrics_csv(straight)

    def test_checkpoint_rejects_foreign_format(self):
        with pytest.raises(ValueError):
            Trainer.from_state_dict({"format": "something-else"})

    def test_metrics_file_round_trip(self, tmp_path):
        _, metrics = run_training(fast_config(), tmp_path)
        rows = read_metrics(tmp_path / "metrics.csv")
        assert len(rows) == len(metrics)
        for row, orig in zip(rows, metrics):
            for key in METRIC_COLUMNS:
                assert row[key] == orig.get(key)


class TestEvaluate:
    def test_greedy_deterministic_env_has_zero_spread(self):
        trainer = Trainer(fast_config(env="chain"))
        mean, std = evaluate(trainer.agent, make_chain(), 5, "greedy", np.random.default_rng(0), step_limit=30)
        assert std == 0.0

    def test_does_not_touch_agent_or_env(self):
        trainer = Trainer(fast_config(total_env_steps=120))
        trainer.run()
        before = json.dumps(trainer.state_dict())
        evaluate(trainer.agent, trainer.env, 3, "sampled", np.random.default_rng(0))
        assert json.dumps(trainer.state_dict()) == before

    def test_bad_episode_count(self):
        trainer = Trainer(fast_config())
        with pytest.raises(ValueError):
            evaluate(trainer.agent, make_chain(), 0)


def uniform_agent(mdp):
    trainer = Trainer(fast_config(env="bandit", gamma=0.0), mdp)
    agent = trainer.agent
    last = len(agent.policy.sizes) - 2
    agent.policy.params[f"W{last}"] = np.zeros_like(agent.policy.params[f"W{last}"])
    agent.policy.params[f"b{last}"] = np.zeros_like(agent.policy.params[f"b{last}"])
    return agent


class TestCompareToOracle:
    def test_uniform_bandit_gap(self):
        mdp = make_bandit()
        report = compare_to_oracle(uniform_agent(mdp), mdp, alpha=1.0)
        # log(1 + e) - (0.5 + log 2)
        assert report["objective_gap"] == pytest.approx(math.log(1 + math.e) - 0.5 - math.log(2), abs=1e-10)
        assert report["max_tv"] == pytest.approx(math.e / (1 + math.e) - 0.5, abs=1e-10)

    def test_mismatched_mdp(self):
        with pytest.raises(ValueError):
            compare_to_oracle(uniform_agent(make_bandit()), make_gridworld())

    def test_terminal_states_excluded(self):
        mdp = make_gridworld()
        trainer = Trainer(fast_config(env="gridworld", total_env_steps=10))
        report = compare_to_oracle(trainer.agent, mdp, alpha=0.5)
        assert all(report["per_state_tv"][s] == 0.0 for s in np.flatnonzero(mdp.terminal))
        assert report["objective_gap"] >= -1e-10


class TestCli:
    def write_config(self, tmp_path, **overrides):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**FAST, "total_env_steps": 200, **overrides}))
        return path

    def test_train_eval_compare(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
        ckpt = tmp_path / "run" / "final.ckpt"
        assert ckpt.exists()
        assert cli.main(["eval", "--checkpoint", str(ckpt), "--episodes", "2"]) == 0
        assert "return mean" in capsys.readouterr().out
        assert cli.main(["compare", "--checkpoint", str(ckpt), "--out", str(tmp_path / "r.json")]) == 0
        assert "objective_gap" in json.loads((tmp_path / "r.json").read_text())

    def test_seed_fan_out_and_plot(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "multi"
        assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--seeds", "0,1"]) == 0
        lines = (out / "metrics_all.csv").read_text().splitlines()
        assert lines[0] == "seed," + ",".join(METRIC_COLUMNS)
        assert {line.split(",")[0] for line in lines[1:]} == {"0", "1"}
        svg = tmp_path / "curve.svg"
        files = [str(out / f"seed_{s}" / "metrics.csv") for s in (0, 1)]
        assert cli.main(["plot", "--metrics", *files, "--out", str(svg)]) == 0
        assert svg.read_text().lstrip().startswith("<?xml")

    def test_oracle_solve_writes_solution(self, tmp_path, capsys):
        out = tmp_path / "sol.json"
        assert cli.main(["oracle-solve", "--mdp", "two_state", "--alpha", "0.2", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["residual"] < 1e-10
        np.testing.assert_allclose(np.array(doc["policy"]).reshape(2, 2), [[0.574, 0.426], [0.721, 0.279]], atol=1e-3)

    def test_oracle_solve_from_mdp_file(self, tmp_path):
        path = tmp_path / "m.json"
        make_chain(4).save(path)
        assert cli.main(["oracle-solve", "--mdp", str(path), "--alpha", "0.5"]) == 0

    def test_gradcheck(self, capsys):
        assert cli.main(["gradcheck", "--batches", "2"]) == 0
        out = capsys.readouterr().out
        assert all(name in out for name in ("critic", "policy", "temperature"))

    def test_bad_subcommand_exits_2(self, capsys):
        assert cli.main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_bad_flag_exits_2(self):
        assert cli.main(["gradcheck", "--nope"]) == 2

    def test_missing_file_exits_1(self, tmp_path, capsys):
        assert cli.main(["eval", "--checkpoint", str(tmp_path / "absent.ckpt")]) == 1
        assert "error" in capsys.readouterr().err
