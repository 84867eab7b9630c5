import numpy as np
import pytest

from claribot import nn
from claribot.core import Hypothesis, IntentToken, MoveKind
from claribot.env import Observation, Transition, featurize
from claribot.policies import (
    ACTIONS,
    DEFAULT_THRESHOLDS,
    AgentConfig,
    DqnAgent,
    EpsilonSchedule,
    ExecuteOnlyPolicy,
    ReplayBuffer,
    Thresholds,
    ddqn_config,
    dqn_config,
    epsilon,
    fixed_execute_only,
    fixed_threshold_policy,
    select_action,
)


def score_hyp(asr, nlu_intent, nlu_slot=1.0, slotted=False):
    intent = IntentToken.intent("GetDirectorIntent", ("movie_title",)) if slotted \
        else IntentToken.intent("GetRatingIntent")
    return Hypothesis(
        words=("w",), intent=intent, slots=(),
        asr_score=asr, nlu_intent_score=nlu_intent,
        nlu_slot_score=nlu_slot if slotted else 1.0,
    )


def obs(intent=0, asr=0.8, nlu=0.9, slot=1.0, prev=0):
    return Observation(intent, (0.0, 0.0, 0.0), asr, nlu, slot, prev)


def transition(a=0, r=1.0, terminal=False, intent=0):
    w = (obs(intent),)
    return Transition(w, a, r, None if terminal else (obs(intent, prev=1),), terminal)


class TestFixedPolicies:
    def test_execute_only_ignores_scores(self):
        for asr, nlu in ((0.0, 0.0), (1.0, 1.0), (0.3, 0.9)):
            move = fixed_execute_only(score_hyp(asr, nlu))
            assert move.kind is MoveKind.EXECUTE

    def test_published_thresholds_confirm_the_low_asr_high_nlu_case(self):
        move = fixed_threshold_policy(score_hyp(0.239, 0.769), DEFAULT_THRESHOLDS)
        assert move.kind is MoveKind.CONFIRM

    def test_both_bars_met_executes(self):
        move = fixed_threshold_policy(score_hyp(0.50, 0.60), DEFAULT_THRESHOLDS)
        assert move.kind is MoveKind.EXECUTE

    def test_hopeless_asr_elicits(self):
        move = fixed_threshold_policy(score_hyp(0.05, 0.90), DEFAULT_THRESHOLDS)
        assert move.kind is MoveKind.ELICIT

    def test_uses_weaker_of_the_two_nlu_scores(self):
        move = fixed_threshold_policy(score_hyp(0.9, 0.95, nlu_slot=0.3, slotted=True),
                                      DEFAULT_THRESHOLDS)
        assert move.kind is MoveKind.CONFIRM

    def test_partition_of_the_unit_square(self):
        # every score pair maps to exactly one action
        counts = {MoveKind.EXECUTE: 0, MoveKind.CONFIRM: 0, MoveKind.ELICIT: 0}
        for i in range(101):
            for j in range(101):
                move = fixed_threshold_policy(score_hyp(i / 100, j / 100), DEFAULT_THRESHOLDS)
                counts[move.kind] += 1
        assert sum(counts.values()) == 101 * 101
        assert all(v > 0 for v in counts.values())

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            Thresholds(0.3, 0.5, 0.4)  # elicit bar above execute bar
        with pytest.raises(ValueError):
            Thresholds(1.2, 0.5, 0.1)


class TestEpsilonSchedule:
    def test_published_endpoints(self):
        schedule = EpsilonSchedule(1.0, 0.1, 100_000)
        assert epsilon(0, schedule) == 1.0
        assert epsilon(100_000, schedule) == pytest.approx(0.1)
        assert epsilon(50_000, schedule) == pytest.approx(0.55)

    def test_clamped_after_decay(self):
        schedule = EpsilonSchedule(1.0, 0.1, 100_000)
        assert epsilon(500_000, schedule) == 0.1


class TestSelectAction:
    def test_greedy_argmax(self, rng):
        assert select_action(np.array([1.0, 5.0, 2.0]), 0.0, rng) == 1

    def test_greedy_tie_takes_lowest_index(self, rng):
        assert select_action(np.array([5.0, 5.0, 1.0]), 0.0, rng) == 0

    def test_fully_random_is_uniform(self):
        rng = np.random.default_rng(4)
        counts = np.zeros(3)
        n = 100_000
        q = np.array([9.0, 1.0, 1.0])
        for _ in range(n):
            counts[select_action(q, 1.0, rng)] += 1
        assert np.max(np.abs(counts / n - 1 / 3)) < 0.01


class TestReplayBuffer:
    def test_capacity_never_exceeded(self, rng):
        buffer = ReplayBuffer(10)
        for i in range(25):
            buffer.push(transition(r=float(i)))
        assert len(buffer) == 10

    def test_fifo_eviction(self):
        buffer = ReplayBuffer(5)
        items = [transition(r=float(i)) for i in range(8)]
        for item in items:
            buffer.push(item)
        for old in items[:3]:
            assert old not in buffer
        for kept in items[3:]:
            assert kept in buffer

    def test_uniform_sampling(self):
        buffer = ReplayBuffer(4)
        items = [transition(r=float(i)) for i in range(4)]
        for item in items:
            buffer.push(item)
        rng = np.random.default_rng(0)
        counts = {i: 0 for i in range(4)}
        for _ in range(40_000):
            for t in buffer.sample(1, rng):
                counts[int(t.reward)] += 1
        for c in counts.values():
            assert abs(c / 40_000 - 0.25) < 0.02


class TestQNetwork:
    def test_terminal_target_is_reward(self):
        agent = DqnAgent(dqn_config(warmup=1, dropout=0.0), n_intent_rows=4, n_slot_types=3, seed=0)
        batch = [transition(a=1, r=11.0, terminal=True)]
        q_before, _ = agent.online.forward([batch[0].window])
        loss = agent.q_update(batch)
        # terminal transition: the target is exactly the reward
        assert loss == pytest.approx(float((q_before[0, 1] - 11.0) ** 2), abs=1e-12)

    def test_double_dqn_equals_plain_max_with_cloned_networks(self):
        # when online == target, argmax under online evaluated by target is the max
        ddqn = DqnAgent(ddqn_config(warmup=1), n_intent_rows=4, n_slot_types=3, seed=1)
        ddqn.target_params.copy_values_from(ddqn.online_params)
        windows = [(obs(i % 3),) for i in range(6)]
        online_q, _ = ddqn.online.forward(windows)
        target_q, _ = ddqn.target.forward(windows)
        best = online_q.argmax(axis=1)
        assert np.allclose(target_q[np.arange(6), best], target_q.max(axis=1))

    def test_td_loss_matches_hand_computed_forward_pass(self):
        cfg = dqn_config(hidden_layers=1, hidden_nodes=4, embedding_size=2, window=1,
                         dropout=0.0, warmup=1)
        agent = DqnAgent(cfg, n_intent_rows=3, n_slot_types=3, seed=3)
        tr = transition(a=2, r=5.0, terminal=True)
        # hand forward: embedding row + dense, one affine+relu, head affine
        emb = agent.online.embedding.table.value
        x = featurize(tr.window, emb, 1)
        h = x @ agent.online.trunk[0].W.value + agent.online.trunk[0].b.value
        h = np.maximum(h, 0.0)
        q = h @ agent.online.head.W.value + agent.online.head.b.value
        expected_loss = float((q[2] - 5.0) ** 2)
        loss = agent.q_update([tr])
        assert loss == pytest.approx(expected_loss, abs=1e-10)

    def test_gradient_of_td_loss_through_everything(self, rng):
        cfg = ddqn_config(hidden_layers=2, hidden_nodes=6, embedding_size=3, window=2,
                          dropout=0.0, warmup=1)
        agent = DqnAgent(cfg, n_intent_rows=5, n_slot_types=3, seed=4)
        batch = [
            Transition((obs(1), obs(2, prev=1)), 0, 3.0, ((obs(3, prev=2),)), False),
            Transition((obs(4),), 2, -6.0, None, True),
        ]
        rewards = np.array([t.reward for t in batch])
        actions = np.array([t.action for t in batch])
        terminal = np.array([t.terminal for t in batch])
        next_windows = [t.next_window if t.next_window is not None else t.window for t in batch]
        # freeze targets so the loss is a pure function of online parameters
        target_next, _ = agent.target.forward(next_windows)
        frozen = rewards + cfg.gamma * target_next.max(axis=1) * (~terminal)

        def loss_only():
            q, _ = agent.online.forward([t.window for t in batch])
            td = q[np.arange(2), actions] - frozen
            return float(np.mean(td**2))

        def loss_and_grad():
            q, cache = agent.online.forward([t.window for t in batch])
            td = q[np.arange(2), actions] - frozen
            dq = np.zeros_like(q)
            dq[np.arange(2), actions] = 2.0 * td / 2
            agent.online.backward(dq, cache)
            return float(np.mean(td**2))

        agent.online_params.zero_grads()
        loss_and_grad()
        assert nn.grad_check(agent.online_params, loss_only) < 1e-4

    def test_greedy_agent_is_deterministic(self):
        agent = DqnAgent(dqn_config(warmup=1), n_intent_rows=4, n_slot_types=3, seed=5)
        window = (obs(1), obs(2, prev=1))
        kinds = {agent.greedy_kind(window) for _ in range(10)}
        assert len(kinds) == 1


class TestTargetSync:
    def test_sync_copies_exactly(self):
        agent = DqnAgent(dqn_config(warmup=1), n_intent_rows=4, n_slot_types=3, seed=6)
        agent.q_update([transition(a=0, r=1.0, terminal=True)])
        window = (obs(2),)
        before_online, _ = agent.online.forward([window])
        before_target, _ = agent.target.forward([window])
        assert not np.allclose(before_online, before_target)
        agent.target_sync()
        after_target, _ = agent.target.forward([window])
        assert np.max(np.abs(after_target - before_online)) < 1e-12

    def test_target_untouched_before_first_sync(self):
        cfg = dqn_config(warmup=1, target_interval=10_000)
        agent = DqnAgent(cfg, n_intent_rows=4, n_slot_types=3, seed=7)
        snapshot = {p.name: p.value.copy() for p in agent.target_params}
        for _ in range(5):
            agent.q_update([transition(a=0, r=1.0, terminal=True)])
        for p in agent.target_params:
            assert np.array_equal(p.value, snapshot[p.name])

    def test_sync_count_is_floor_of_updates_over_interval(self):
        cfg = dqn_config(warmup=1, target_interval=7)
        agent = DqnAgent(cfg, n_intent_rows=4, n_slot_types=3, seed=8)
        for _ in range(23):
            agent.q_update([transition(a=0, r=1.0, terminal=True)])
        assert agent.syncs == 23 // 7

    def test_checkpoint_round_trip(self, tmp_path):
        agent = DqnAgent(ddqn_config(warmup=1), n_intent_rows=4, n_slot_types=3, seed=9)
        agent.q_update([transition(a=1, r=2.0, terminal=True)])
        path = str(tmp_path / "agent.ckpt.json")
        agent.save(path)
        loaded = DqnAgent.load(path)
        window = (obs(3),)
        a, _ = agent.online.forward([window])
        b, _ = loaded.online.forward([window])
        assert np.array_equal(a, b)
        assert loaded.cfg == agent.cfg
