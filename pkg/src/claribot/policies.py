"""Dialog policies: fixed rules with threshold tuning, and deep Q-learning
agents (DQN and Dueling Double-DQN) with experience replay and a target net.

The Q-network input is the windowed observation featurization; the intent
embedding table is part of the trainable parameters, so gradients flow through
the embedding lookup.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, asdict

import numpy as np

from .core import BotMove, Hypothesis, MoveKind
from .env import N_SCORES, ObsWindow, PREV_ACTIONS, Transition, feature_length, run_episode
from . import nn

ACTIONS = (MoveKind.EXECUTE, MoveKind.CONFIRM, MoveKind.ELICIT)
N_ACTIONS = len(ACTIONS)


@dataclass(frozen=True)
class Thresholds:
    """Confidence cutoffs for the rule-based execute/confirm/elicit policy."""

    asr_exec: float
    nlu_exec: float
    asr_elicit: float

    def __post_init__(self) -> None:
        for label, v in (("asr_exec", self.asr_exec), ("nlu_exec", self.nlu_exec), ("asr_elicit", self.asr_elicit)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{label}={v} outside [0, 1]")
        if self.asr_elicit > self.asr_exec:
            raise ValueError("asr_elicit must not exceed asr_exec")


# The deployed rule set this workbench reproduces by default.
DEFAULT_THRESHOLDS = Thresholds(asr_exec=0.34, nlu_exec=0.56, asr_elicit=0.06)


def fixed_execute_only(hyp: Hypothesis) -> BotMove:
    return BotMove(MoveKind.EXECUTE, hyp)


def fixed_threshold_policy(hyp: Hypothesis, th: Thresholds) -> BotMove:
    """Execute when both scores clear their bars, elicit when ASR is hopeless,
    confirm otherwise. The NLU score is the weaker of intent and slot scores."""
    nlu = min(hyp.nlu_intent_score, hyp.nlu_slot_score)
    if hyp.asr_score >= th.asr_exec and nlu >= th.nlu_exec:
        return BotMove(MoveKind.EXECUTE, hyp)
    if hyp.asr_score < th.asr_elicit:
        return BotMove(MoveKind.ELICIT)
    return BotMove(MoveKind.CONFIRM, hyp)


class ExecuteOnlyPolicy:
    name = "execute-only"

    def act(self, window: ObsWindow, hyp: Hypothesis) -> BotMove:
        return fixed_execute_only(hyp)


class ThresholdPolicy:
    name = "fixed-threshold"

    def __init__(self, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> None:
        self.thresholds = thresholds

    def act(self, window: ObsWindow, hyp: Hypothesis) -> BotMove:
        return fixed_threshold_policy(hyp, self.thresholds)


class ConstantPolicy:
    """Always plays one move kind; used for oracle checks."""

    def __init__(self, kind: MoveKind) -> None:
        self.kind = kind
        self.name = f"always-{kind.value}"

    def act(self, window: ObsWindow, hyp: Hypothesis) -> BotMove:
        if self.kind is MoveKind.ELICIT:
            return BotMove(MoveKind.ELICIT)
        return BotMove(self.kind, hyp)


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.1
    decay_steps: int = 100_000


def epsilon(step: int, schedule: EpsilonSchedule) -> float:
    """Linear interpolation from start to end, clamped afterwards."""
    if step >= schedule.decay_steps:
        return schedule.end
    frac = step / schedule.decay_steps
    return schedule.start + (schedule.end - schedule.start) * frac


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the action values; greedy ties go to the lowest index."""
    if rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0
        self.inserted = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
        self._cursor = (self._cursor + 1) % self.capacity
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item: Transition) -> bool:
        return any(x is item for x in self._items)


@dataclass
class AgentConfig:
    """Learning-agent settings; the two presets below are the tuned values."""

    algorithm: str = "dqn"  # "dqn" | "dueling-ddqn"
    hidden_layers: int = 2
    hidden_nodes: int = 32
    embedding_size: int = 5
    dropout: float = 0.5
    lr: float = 1e-4
    replay_size: int = 10_000
    window: int = 2
    gamma: float = 0.97
    target_interval: int = 12_000
    batch_size: int = 32
    warmup: int = 1000
    embed_init: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.algorithm not in ("dqn", "dueling-ddqn"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for name in ("hidden_layers", "hidden_nodes", "embedding_size", "replay_size",
                     "window", "target_interval", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, self.eps_decay_steps)

    def to_dict(self) -> dict:
        return asdict(self)


def dqn_config(**overrides) -> AgentConfig:
    base = dict(
        algorithm="dqn", hidden_layers=2, hidden_nodes=32, embedding_size=5,
        dropout=0.5, lr=1e-4, replay_size=10_000, window=2, target_interval=12_000,
    )
    base.update(overrides)
    return AgentConfig(**base)


def ddqn_config(**overrides) -> AgentConfig:
    base = dict(
        algorithm="dueling-ddqn", hidden_layers=3, hidden_nodes=128, embedding_size=30,
        dropout=0.0, lr=1e-5, replay_size=15_000, window=8, target_interval=8_000,
    )
    base.update(overrides)
    return AgentConfig(**base)


class QNetwork:
    """Embedding + MLP trunk (ReLU, optional dropout) + linear or dueling head."""

    def __init__(
        self,
        cfg: AgentConfig,
        n_intent_rows: int,
        n_slot_types: int,
        params: nn.ParamSet,
        rng: np.random.Generator,
    ) -> None:
        self.cfg = cfg
        self.n_slot_types = n_slot_types
        self.segment = cfg.embedding_size + n_slot_types + N_SCORES + PREV_ACTIONS
        self.input_dim = feature_length(cfg.window, cfg.embedding_size, n_slot_types)
        self.embedding = nn.Embedding(
            params, "q.embed", n_intent_rows, cfg.embedding_size, rng, init_scale=cfg.embed_init
        )
        self.trunk: list[nn.Affine] = []
        width = self.input_dim
        for i in range(cfg.hidden_layers):
            self.trunk.append(nn.Affine(params, f"q.h{i}", width, cfg.hidden_nodes, rng))
            width = cfg.hidden_nodes
        self.relu = nn.Relu()
        self.dropout = nn.Dropout(cfg.dropout)
        if cfg.algorithm == "dueling-ddqn":
            self.head: nn.Affine | nn.DuelingHead = nn.DuelingHead(params, "q.head", width, N_ACTIONS, rng)
        else:
            self.head = nn.Affine(params, "q.head", width, N_ACTIONS, rng)

    def assemble(self, windows: list[ObsWindow]) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
        e = self.cfg.embedding_size
        table = self.embedding.table.value
        x = np.zeros((len(windows), self.input_dim))
        lookups: list[tuple[int, int, int]] = []
        for b, window in enumerate(windows):
            recent = window[-self.cfg.window :]
            offset = (self.cfg.window - len(recent)) * self.segment
            for obs in recent:
                x[b, offset : offset + e] = table[obs.intent_index]
                x[b, offset + e : offset + self.segment] = obs.dense()
                lookups.append((b, offset, obs.intent_index))
                offset += self.segment
        return x, lookups

    def forward(
        self,
        windows: list[ObsWindow],
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, dict]:
        x, lookups = self.assemble(windows)
        cache: dict = {"lookups": lookups, "layers": []}
        h = x
        for layer in self.trunk:
            a, affine_cache = layer.forward(h)
            h, relu_cache = self.relu.forward(a)
            h, drop_mask = self.dropout.forward(h, train=train, rng=rng)
            cache["layers"].append((affine_cache, relu_cache, drop_mask))
        q, head_cache = self.head.forward(h)
        cache["head"] = head_cache
        return q, cache

    def backward(self, dq: np.ndarray, cache: dict) -> None:
        dh = self.head.backward(dq, cache["head"])
        for layer, (affine_cache, relu_cache, drop_mask) in zip(
            reversed(self.trunk), reversed(cache["layers"])
        ):
            dh = self.dropout.backward(dh, drop_mask)
            dh = self.relu.backward(dh, relu_cache)
            dh = layer.backward(dh, affine_cache)
        e = self.cfg.embedding_size
        grad = self.embedding.table.grad
        for b, offset, intent_index in cache["lookups"]:
            grad[intent_index] += dh[b, offset : offset + e]


class DqnAgent:
    """Q-learning agent; one instance owns its networks, replay, and rngs."""

    def __init__(self, cfg: AgentConfig, n_intent_rows: int, n_slot_types: int, seed: int = 0) -> None:
        self.cfg = cfg
        self.n_intent_rows = n_intent_rows
        self.n_slot_types = n_slot_types
        root = np.random.SeedSequence(seed)
        init_seed, action_seed, replay_seed, drop_seed = root.spawn(4)
        init_rng = np.random.default_rng(init_seed)
        self.online_params = nn.ParamSet()
        self.online = QNetwork(cfg, n_intent_rows, n_slot_types, self.online_params, init_rng)
        self.target_params = nn.ParamSet()
        self.target = QNetwork(cfg, n_intent_rows, n_slot_types, self.target_params, np.random.default_rng(0))
        self.target_params.copy_values_from(self.online_params)
        self.optimizer = nn.Adam(cfg.lr)
        self.action_rng = np.random.default_rng(action_seed)
        self.replay_rng = np.random.default_rng(replay_seed)
        self.dropout_rng = np.random.default_rng(drop_seed)
        self.replay = ReplayBuffer(cfg.replay_size)
        self.updates = 0
        self.syncs = 0

    # -- acting ---------------------------------------------------------------

    def q_values(self, window: ObsWindow) -> np.ndarray:
        q, _ = self.online.forward([window])
        return q[0]

    def act_index(self, window: ObsWindow, eps: float) -> int:
        return select_action(self.q_values(window), eps, self.action_rng)

    def greedy_kind(self, window: ObsWindow) -> MoveKind:
        return ACTIONS[int(np.argmax(self.q_values(window)))]

    def policy(self) -> "GreedyAgentPolicy":
        return GreedyAgentPolicy(self)

    # -- learning ---------------------------------------------------------------

    def observe(self, transition: Transition) -> float | None:
        """Store a transition; after warmup, take one gradient step."""
        self.replay.push(transition)
        if len(self.replay) < max(self.cfg.warmup, self.cfg.batch_size):
            return None
        batch = self.replay.sample(self.cfg.batch_size, self.replay_rng)
        return self.q_update(batch)

    def q_update(self, batch: list[Transition]) -> float:
        n = len(batch)
        rows = np.arange(n)
        rewards = np.array([t.reward for t in batch])
        actions = np.array([t.action for t in batch])
        terminal = np.array([t.terminal for t in batch])
        next_windows = [t.next_window if t.next_window is not None else t.window for t in batch]

        if self.cfg.algorithm == "dueling-ddqn":
            online_next, _ = self.online.forward(next_windows)
            best_next = online_next.argmax(axis=1)
            target_next, _ = self.target.forward(next_windows)
            next_value = target_next[rows, best_next]
        else:
            target_next, _ = self.target.forward(next_windows)
            next_value = target_next.max(axis=1)
        targets = rewards + self.cfg.gamma * next_value * (~terminal)

        q, cache = self.online.forward([t.window for t in batch], train=True, rng=self.dropout_rng)
        td = q[rows, actions] - targets
        loss = float(np.mean(td**2))
        if not np.isfinite(loss):
            raise nn.TrainingError(f"non-finite TD loss {loss}")
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * td / n
        self.online.backward(dq, cache)
        self.optimizer.step(self.online_params)
        self.updates += 1
        if self.updates % self.cfg.target_interval == 0:
            self.target_sync()
        return loss

    def target_sync(self) -> None:
        self.target_params.copy_values_from(self.online_params)
        self.syncs += 1

    # -- persistence -------------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {
            "model": "dqn-agent",
            "config": self.cfg.to_dict(),
            "n_intent_rows": self.n_intent_rows,
            "n_slot_types": self.n_slot_types,
        }
        nn.save_params(path, self.online_params, meta)

    @classmethod
    def load(cls, path: str) -> "DqnAgent":
        arrays, meta = nn.load_params(path)
        if meta.get("model") != "dqn-agent":
            raise ValueError(f"{path} is not an agent checkpoint")
        agent = cls(
            AgentConfig(**meta["config"]),
            n_intent_rows=meta["n_intent_rows"],
            n_slot_types=meta["n_slot_types"],
        )
        for p in agent.online_params:
            p.value[...] = arrays[p.name]
        agent.target_params.copy_values_from(agent.online_params)
        return agent


class GreedyAgentPolicy:
    """Exploration-free view of a trained agent."""

    def __init__(self, agent: DqnAgent) -> None:
        self.agent = agent
        self.name = agent.cfg.algorithm

    def act(self, window: ObsWindow, hyp: Hypothesis) -> BotMove:
        kind = self.agent.greedy_kind(window)
        if kind is MoveKind.ELICIT:
            return BotMove(MoveKind.ELICIT)
        return BotMove(kind, hyp)


def tune_thresholds(
    env_factory,
    grid: dict[str, list[float]],
    episodes_per_point: int,
    seed: int,
) -> tuple[Thresholds, list[tuple[Thresholds, float]]]:
    """Exhaustive grid search maximizing mean undiscounted return.

    Every grid point is evaluated on the same episode seeds (common random
    numbers). Ties break toward higher execute bars and a lower elicit bar.
    Returns the winner and the full (thresholds, mean return) table.
    """
    axes = [grid["asr_exec"], grid["nlu_exec"], grid["asr_elicit"]]
    if any(not axis for axis in axes):
        raise ValueError("empty grid axis")
    seed_rng = np.random.default_rng(seed)
    episode_seeds = [
        (int(seed_rng.integers(2**31)), int(seed_rng.integers(2**31)))
        for _ in range(episodes_per_point)
    ]
    results: list[tuple[Thresholds, float]] = []
    for asr_exec, nlu_exec, asr_elicit in itertools.product(*axes):
        if asr_elicit > asr_exec:
            continue
        th = Thresholds(asr_exec, nlu_exec, asr_elicit)
        policy = ThresholdPolicy(th)
        total = 0.0
        for user_seed, channel_seed in episode_seeds:
            env = env_factory()
            log = run_episode(env, policy, user_seed, channel_seed)
            total += sum(log.rewards())
        results.append((th, total / episodes_per_point))
    best = max(
        results,
        key=lambda item: (item[1], item[0].asr_exec, item[0].nlu_exec, -item[0].asr_elicit),
    )
    return best[0], results
