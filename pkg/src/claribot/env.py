"""The error-recovery MDP: drives the user simulator and the noisy channel,
computes rewards, and exposes reset/step with windowed observations.

Observations are kept structural (intent index plus dense confidence/action
features); the numeric feature vector is produced by ``featurize`` with the
agent's own intent-embedding table, so the embedding can train jointly with
the Q-network while replayed transitions stay fresh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelConfig, NluModel, recognize
from .core import (
    ActKind,
    BotMove,
    EpisodeLog,
    Hypothesis,
    MoveKind,
    ProtocolError,
    RewardTable,
    TurnRecord,
    UserAct,
    matches,
)
from .domain import Domain
from .usersim import SimState, UserSimulator

# Previous-action channel: None, Execute, Confirm, Elicit.
PREV_ACTIONS = 4
N_SCORES = 3


@dataclass(frozen=True)
class Observation:
    """One turn as the agent sees it."""

    intent_index: int
    slot_bits: tuple[float, ...]
    asr_score: float
    nlu_intent_score: float
    nlu_slot_score: float
    prev_action: int  # 0 none, 1 execute, 2 confirm, 3 elicit

    def dense(self) -> np.ndarray:
        action_onehot = [0.0] * PREV_ACTIONS
        action_onehot[self.prev_action] = 1.0
        return np.array(
            list(self.slot_bits)
            + [self.asr_score, self.nlu_intent_score, self.nlu_slot_score]
            + action_onehot
        )


ObsWindow = tuple[Observation, ...]


def feature_length(window: int, embed_dim: int, n_slot_types: int) -> int:
    return window * (embed_dim + n_slot_types + N_SCORES + PREV_ACTIONS)


def featurize(window: ObsWindow, embedding: np.ndarray, window_size: int) -> np.ndarray:
    """Concatenate the last ``window_size`` observations, oldest first, with
    positions older than the history zero-filled."""
    embed_dim = embedding.shape[1]
    n_slot_types = len(window[0].slot_bits) if window else 0
    segment = embed_dim + n_slot_types + N_SCORES + PREV_ACTIONS
    out = np.zeros(window_size * segment)
    recent = window[-window_size:]
    offset = (window_size - len(recent)) * segment
    for obs in recent:
        out[offset : offset + embed_dim] = embedding[obs.intent_index]
        out[offset + embed_dim : offset + segment] = obs.dense()
        offset += segment
    return out


@dataclass
class StepResult:
    window: ObsWindow | None
    reward: float
    terminal: bool
    info: dict


@dataclass
class Transition:
    window: ObsWindow
    action: int
    reward: float
    next_window: ObsWindow | None
    terminal: bool


class DialogEnv:
    """One episode driver; build a fresh instance (or call reset) per episode."""

    def __init__(
        self,
        sim: UserSimulator,
        nlu: NluModel,
        channel_cfg: ChannelConfig,
        domain: Domain,
        window_size: int = 2,
        max_agent_turns: int = 40,
        rewards: RewardTable = RewardTable(),
        opening_retries: int = 10,
    ) -> None:
        self.sim = sim
        self.nlu = nlu
        self.channel_cfg = channel_cfg
        self.domain = domain
        self.window_size = window_size
        self.max_agent_turns = max_agent_turns
        self.rewards = rewards
        self.opening_retries = opening_retries
        vocab = domain.vocab()
        self.vocab = vocab
        self.unknown_intent_index = vocab.size
        self.n_intent_rows = vocab.size + 1  # dedicated row for Unknown
        self._state: SimState | None = None
        self._terminal = True

    # -- observation plumbing -------------------------------------------------

    def _intent_index(self, hyp: Hypothesis) -> int:
        if hyp.intent is None:
            return self.unknown_intent_index
        return self.vocab.idx(hyp.intent)

    def _observe(self, hyp: Hypothesis, prev_action: int) -> Observation:
        filled = {s.slot_type for s in hyp.slots}
        bits = tuple(1.0 if t in filled else 0.0 for t in self.domain.slot_types)
        return Observation(
            intent_index=self._intent_index(hyp),
            slot_bits=bits,
            asr_score=hyp.asr_score,
            nlu_intent_score=hyp.nlu_intent_score,
            nlu_slot_score=hyp.nlu_slot_score,
            prev_action=prev_action,
        )

    def _push(self, obs: Observation) -> None:
        self._window = (self._window + (obs,))[-self.window_size :]

    # -- episode driver --------------------------------------------------------

    def reset(self, user_seed: int, channel_seed: int, agent_seed: int = 0) -> ObsWindow:
        self._state = self.sim.new_state(user_seed)
        self._channel_rng = np.random.default_rng(channel_seed)
        self._seed_triplet = (user_seed, channel_seed, agent_seed)
        act = None
        for _ in range(self.opening_retries):
            act = self.sim.next_user_act(self._state, None)
            if act.act_kind is not ActKind.TERMINATE:
                break
            self._state.reset_for_retry()
            act = None
        if act is None:
            raise RuntimeError(f"empty opening sample {self.opening_retries} times in a row")
        self._ref = act
        self._hyp = recognize(act.words, self.nlu, self.channel_cfg, self._channel_rng)
        self._window: ObsWindow = ()
        self._push(self._observe(self._hyp, prev_action=0))
        self._terminal = False
        self._agent_turns = 0
        self._last_execute_correct: bool | None = None
        self._turns: list[TurnRecord] = []
        self._terminal_bonus = 0.0
        return self._window

    @property
    def current_hypothesis(self) -> Hypothesis:
        return self._hyp

    @property
    def terminal(self) -> bool:
        return self._terminal

    def episode_log(self) -> EpisodeLog:
        return EpisodeLog(
            turns=list(self._turns),
            terminal_bonus=self._terminal_bonus,
            seed_triplet=self._seed_triplet,
        )

    def move_for(self, kind: MoveKind) -> BotMove:
        """Build the BotMove for an action kind against the current hypothesis."""
        if kind is MoveKind.ELICIT:
            return BotMove(MoveKind.ELICIT)
        return BotMove(kind, self._hyp)

    def step(self, action: BotMove) -> StepResult:
        if self._terminal or self._state is None:
            raise ProtocolError("step() after the episode terminated")
        self._agent_turns += 1
        ref = self._ref
        hyp = self._hyp
        correct = matches(hyp, ref)
        info: dict = {"correct": correct, "turn_index": self._agent_turns}

        if action.kind is MoveKind.EXECUTE:
            reward = self.rewards.for_move(MoveKind.EXECUTE, correct)
            self._last_execute_correct = correct
            response = self.domain.bot_response_text(hyp.intent, hyp.slots)
            self.sim.observe_response(self._state, response)
            nxt = self.sim.next_user_act(self._state, action)
            info["user_act"] = nxt.act_kind.value
            if nxt.act_kind is ActKind.TERMINATE:
                reward += self._close(correct_context=self._last_execute_correct)
            else:
                self._ref = nxt
                self._hyp = recognize(nxt.words, self.nlu, self.channel_cfg, self._channel_rng)
                self._push(self._observe(self._hyp, prev_action=1))
        elif action.kind is MoveKind.CONFIRM:
            reward = self.rewards.for_move(MoveKind.CONFIRM)
            answer = self.sim.next_user_act(self._state, action)
            info["user_act"] = answer.act_kind.value
            if answer.act_kind is ActKind.TERMINATE:
                reward += self._close(correct_context=self._last_execute_correct)
            elif answer.act_kind is ActKind.CONFIRM_YES:
                # Committed: the scores become certain in the next observation.
                self._hyp = replace(
                    hyp, asr_score=1.0, nlu_intent_score=1.0, nlu_slot_score=1.0
                )
                self._push(self._observe(self._hyp, prev_action=2))
            else:
                self._push(self._observe(self._hyp, prev_action=2))
        else:  # ELICIT
            reward = self.rewards.for_move(MoveKind.ELICIT)
            repeat = self.sim.next_user_act(self._state, action)
            info["user_act"] = repeat.act_kind.value
            if repeat.act_kind is ActKind.TERMINATE:
                reward += self._close(correct_context=self._last_execute_correct)
            else:
                self._hyp = recognize(repeat.words, self.nlu, self.channel_cfg, self._channel_rng)
                self._push(self._observe(self._hyp, prev_action=3))

        if not self._terminal and self._agent_turns >= self.max_agent_turns:
            reward += self._close(correct_context=self._last_execute_correct)
            info["user_act"] = "cap"

        self._turns.append(TurnRecord(user=ref, hyp=hyp, bot=action, reward=reward, correct=correct))
        window = None if self._terminal else self._window
        return StepResult(window=window, reward=reward, terminal=self._terminal, info=info)

    def _close(self, correct_context: bool | None) -> float:
        self._terminal = True
        bonus = self.rewards.terminal_bonus(correct_context)
        self._terminal_bonus = bonus
        return bonus


def run_episode(
    env: DialogEnv,
    policy,
    user_seed: int,
    channel_seed: int,
    agent_seed: int = 0,
) -> EpisodeLog:
    """Roll one full episode with any policy exposing act(window, hyp)."""
    window = env.reset(user_seed, channel_seed, agent_seed)
    while not env.terminal:
        move = policy.act(window, env.current_hypothesis)
        result = env.step(move)
        window = result.window
    return env.episode_log()
