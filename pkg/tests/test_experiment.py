import json
import math
import os

import numpy as np
import pytest

from claribot import experiment as exp
from claribot import policies as pol
from claribot.core import MoveKind
from claribot.env import DialogEnv, run_episode


@pytest.fixture(scope="module")
def tiny_stack(user_sim, nlu_model, noisy_channel, movie_domain, rnn_model):
    # A hand-assembled stack over the session fixtures: fast but realistic.
    cfg = exp.desk_config(
        steps=600,
        eval_interval=300,
        eval_episodes=6,
        tune_episodes=6,
        dqn=pol.dqn_config(warmup=50, eps_decay_steps=400),
        ddqn=pol.ddqn_config(warmup=50, eps_decay_steps=400, hidden_nodes=16, window=2),
    )
    return exp.Stack(
        config=cfg,
        domain=movie_domain,
        vocab=movie_domain.vocab(),
        lm=rnn_model,
        channel_cfg=noisy_channel,
        nlu=nlu_model,
        calibration_report="fixture",
    )


@pytest.fixture(scope="module")
def clean_stack(tiny_stack, clean_channel):
    import dataclasses

    return dataclasses.replace(tiny_stack, channel_cfg=clean_channel)


class TestEvaluate:
    def test_execute_only_on_clean_channel(self, clean_stack):
        seeds = exp.eval_seeds_for(0, 0, 20)
        metrics, episodes = exp.evaluate(
            pol.ExecuteOnlyPolicy(), clean_stack.env_factory(2), seeds, gamma=0.97
        )
        assert metrics.execution_success_rate == 1.0
        assert set(metrics.turns_to_execute_histogram) == {1}
        assert metrics.avg_reward_per_turn >= 10.0

    def test_always_elicit_runs_out_the_budget(self, tiny_stack):
        seeds = exp.eval_seeds_for(1, 0, 10)
        metrics, episodes = exp.evaluate(
            pol.ConstantPolicy(MoveKind.ELICIT), tiny_stack.env_factory(2), seeds, gamma=0.97
        )
        assert metrics.execution_success_rate is None
        assert metrics.unsuccessful_execution_rate is None
        assert metrics.turns_to_execute_histogram == {}
        assert metrics.avg_reward_per_turn == pytest.approx(-6.0)
        assert metrics.clarification_mix == 1.0

    def test_histogram_total_equals_execute_count(self, tiny_stack):
        seeds = exp.eval_seeds_for(2, 0, 15)
        metrics, episodes = exp.evaluate(
            pol.ThresholdPolicy(), tiny_stack.env_factory(2), seeds, gamma=0.97
        )
        executes = sum(
            1 for log in episodes for t in log.turns if t.bot.kind is MoveKind.EXECUTE
        )
        assert sum(metrics.turns_to_execute_histogram.values()) == executes

    def test_success_and_failure_rates_sum_to_one(self, tiny_stack):
        seeds = exp.eval_seeds_for(3, 0, 10)
        metrics, _ = exp.evaluate(
            pol.ExecuteOnlyPolicy(), tiny_stack.env_factory(2), seeds, gamma=0.97
        )
        assert metrics.execution_success_rate + metrics.unsuccessful_execution_rate == pytest.approx(1.0)


class TestMetricRecomputation:
    def test_metrics_rederivable_from_exported_transcripts(self, tiny_stack, tmp_path):
        seeds = exp.eval_seeds_for(4, 0, 12)
        metrics, episodes = exp.evaluate(
            pol.ThresholdPolicy(), tiny_stack.env_factory(2), seeds, gamma=0.97
        )
        path = os.path.join(tmp_path, "transcripts.jsonl")
        exp.write_transcripts(episodes, path)
        recovered = exp.read_transcripts(path)
        recomputed = exp.compute_metrics(recovered, gamma=0.97)
        assert recomputed == metrics


class TestAggregate:
    def _fake_run(self, values, algorithm="x", seed=0):
        series = []
        for i, v in enumerate(values):
            m = exp.EvalMetrics(
                avg_reward_per_turn=v,
                avg_discounted_return=v * 2,
                avg_turns_per_dialog=5.0,
                execution_success_rate=0.9,
                unsuccessful_execution_rate=0.1,
                turns_to_execute_histogram={1: 10, 2: 3},
                clarification_mix=0.5,
            )
            series.append(((i + 1) * 100, m))
        return exp.RunArtifacts(algorithm=algorithm, seed=seed, config={}, series=series,
                                final_episodes=[])

    def test_hand_computed_mean_and_sem(self):
        rows = exp.aggregate([self._fake_run([4.0]), self._fake_run([6.0], seed=1)])
        assert rows[0].means["avg_reward_per_turn"] == pytest.approx(5.0)
        # sample stddev sqrt(2), over sqrt(2) -> 1.0
        assert rows[0].sems["avg_reward_per_turn"] == pytest.approx(1.0)
        assert rows[0].n_runs == 2

    def test_single_run_sem_zero_and_flagged(self):
        rows = exp.aggregate([self._fake_run([4.0])])
        assert rows[0].sems["avg_reward_per_turn"] == 0.0
        assert rows[0].n_runs == 1

    def test_permutation_invariant(self):
        runs = [self._fake_run([v], seed=i) for i, v in enumerate((1.0, 5.0, 9.0))]
        a = exp.aggregate(runs)
        b = exp.aggregate(runs[::-1])
        assert a[0].means == b[0].means
        assert a[0].sems == b[0].sems

    def test_mismatched_grids_rejected(self):
        with pytest.raises(ValueError):
            exp.aggregate([self._fake_run([1.0]), self._fake_run([1.0, 2.0], seed=1)])


class TestRunTraining:
    def test_checkpoint_grid_and_determinism(self, tiny_stack, tmp_path):
        art1 = exp.run_training(tiny_stack, "dqn", seed=3)
        art2 = exp.run_training(tiny_stack, "dqn", seed=3)
        assert [s for s, _ in art1.series] == [300, 600]
        assert art1.series == art2.series  # bit-for-bit metric determinism

        dir1, dir2 = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
        exp.export_run(art1, dir1)
        exp.export_run(art2, dir2)
        for name in ("metrics.csv", "histogram.csv", "transcripts.jsonl"):
            with open(os.path.join(dir1, name), "rb") as fa, open(os.path.join(dir2, name), "rb") as fb:
                assert fa.read() == fb.read(), name

    def test_short_run_still_emits_final_checkpoint(self, tiny_stack):
        art = exp.run_training(tiny_stack, "dqn", seed=1, steps=100)
        assert [s for s, _ in art.series] == [100]

    def test_different_seeds_differ(self, tiny_stack):
        a = exp.run_training(tiny_stack, "dqn", seed=1, steps=300)
        b = exp.run_training(tiny_stack, "dqn", seed=2, steps=300)
        assert a.series != b.series


class TestPairedCompare:
    def test_policy_against_itself_is_identical(self, tiny_stack):
        report = exp.paired_compare(
            pol.ThresholdPolicy(), pol.ThresholdPolicy(),
            tiny_stack.env_factory(2), n_dialogs=12, seed=5, gamma=0.97,
        )
        assert report.identical_fraction == 1.0
        assert report.divergent == []

    def test_execute_only_vs_always_confirm_never_identical(self, tiny_stack):
        report = exp.paired_compare(
            pol.ExecuteOnlyPolicy(), pol.ConstantPolicy(MoveKind.CONFIRM),
            tiny_stack.env_factory(2), n_dialogs=10, seed=6, gamma=0.97,
        )
        assert report.identical_fraction == 0.0
        assert len(report.divergent) == 10

    def test_divergent_sample_capped_at_ten(self, tiny_stack):
        report = exp.paired_compare(
            pol.ExecuteOnlyPolicy(), pol.ConstantPolicy(MoveKind.ELICIT),
            tiny_stack.env_factory(2), n_dialogs=15, seed=7, gamma=0.97,
        )
        assert len(report.divergent) == 10

    def test_identical_action_prefixes_see_identical_utterances(self, tiny_stack):
        # delegates to the environment's paired-determinism guarantee
        env_factory = tiny_stack.env_factory(2)
        a = run_episode(env_factory(), pol.ExecuteOnlyPolicy(), 42, 77)
        b = run_episode(env_factory(), pol.ExecuteOnlyPolicy(), 42, 77)
        assert [t.user.words for t in a.turns] == [t.user.words for t in b.turns]


class TestRandomSearch:
    def test_budget_one_returns_that_config(self, tiny_stack):
        best, leaderboard = exp.random_search(tiny_stack, "dqn", budget=1, master_seed=0,
                                              steps_per_trial=150)
        assert len(leaderboard) == 1
        assert best == leaderboard[0][0]

    def test_leaderboard_sorted_and_argmax(self, tiny_stack):
        best, leaderboard = exp.random_search(tiny_stack, "dqn", budget=3, master_seed=1,
                                              steps_per_trial=150)
        objectives = [obj for _, obj in leaderboard]
        assert objectives == sorted(objectives, reverse=True)
        assert all(leaderboard[0][1] >= obj for _, obj in leaderboard)
        assert best == leaderboard[0][0]

    def test_lr_sampled_within_log_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            cfg = exp.sample_agent_config(exp.DEFAULT_SEARCH_SPACE, "dqn", rng)
            assert 1e-5 <= cfg.lr <= 1e-3


class TestConfigRoundTrip:
    def test_json_round_trip(self, tmp_path):
        cfg = exp.desk_config()
        path = os.path.join(tmp_path, "config.json")
        cfg.save(path)
        loaded = exp.ExperimentConfig.load(path)
        assert loaded == cfg

    def test_paper_scale_defaults(self):
        cfg = exp.ExperimentConfig()
        assert cfg.steps == 150_000
        assert cfg.eval_interval == 10_000
        assert cfg.eval_episodes == 30
        assert cfg.gamma == 0.97
        assert cfg.rewards.execute_correct == 10.0
        assert cfg.rewards.execute_wrong == -12.0
        assert cfg.rewards.confirm == -3.0
        assert cfg.rewards.elicit == -6.0
        assert cfg.rewards.terminate_after_correct == 1.0
        assert cfg.rewards.terminate_after_wrong == -5.0
        assert cfg.thresholds == pol.Thresholds(0.34, 0.56, 0.06)
        assert cfg.lm_hidden == 30 and cfg.lm_embed == 50 and cfg.lm_epochs == 100
        assert cfg.lm_lr == 0.001
        # learning-agent presets
        assert cfg.dqn.hidden_layers == 2 and cfg.dqn.hidden_nodes == 32
        assert cfg.dqn.embedding_size == 5 and cfg.dqn.dropout == 0.5
        assert cfg.dqn.lr == 1e-4 and cfg.dqn.replay_size == 10_000
        assert cfg.dqn.window == 2 and cfg.dqn.target_interval == 12_000
        assert cfg.ddqn.hidden_layers == 3 and cfg.ddqn.hidden_nodes == 128
        assert cfg.ddqn.embedding_size == 30 and cfg.ddqn.dropout == 0.0
        assert cfg.ddqn.lr == 1e-5 and cfg.ddqn.replay_size == 15_000
        assert cfg.ddqn.window == 8 and cfg.ddqn.target_interval == 8_000
        assert cfg.dqn.gamma == 0.97 and cfg.ddqn.gamma == 0.97
        assert cfg.dqn.eps_start == 1.0 and cfg.dqn.eps_end == 0.1
        assert cfg.dqn.eps_decay_steps == 100_000


class TestStudyExport:
    def test_bundle_layout_and_key(self, tiny_stack, small_corpus, tmp_path, rnn_model, movie_domain):
        out = os.path.join(tmp_path, "study")
        exp.export_study(small_corpus, rnn_model, movie_domain, n_each=4, seed=0, out_dir=out)
        with open(os.path.join(out, "study_key.json")) as fh:
            key = json.load(fh)
        assert len(key) == 8
        assert sorted(set(key.values())) == ["human", "simulator"]
        text = open(os.path.join(out, "study_dialogs.txt")).read()
        for name in key:
            assert f"== {name} ==" in text
        # the transcripts themselves carry no provenance markers
        assert "human" not in text and "simulator" not in text

    def test_sampled_dialogs_follow_corpus_schema(self, rnn_model, movie_domain, tmp_path):
        from claribot.corpus import load_corpus, save_corpus

        corpus = exp.sample_dialogs(rnn_model, movie_domain, 5, seed=3)
        path = os.path.join(tmp_path, "sampled.jsonl")
        save_corpus(corpus, path)
        assert load_corpus(path).n_dialogs == 5
