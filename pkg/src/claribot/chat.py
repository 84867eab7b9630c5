"""Interactive chat: a human plays the user against any policy, with typed
utterances passed through the noise channel and NLU exactly like simulated
speech. Yes/no answers to a confirm bypass the channel; an elicit asks the
human to restate (fresh channel noise applies).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from .channel import ChannelConfig, NluModel, recognize
from .core import (
    ActKind,
    BotMove,
    EpisodeLog,
    Hypothesis,
    MoveKind,
    TurnRecord,
    UserAct,
)
from .domain import Domain
from .env import Observation, ObsWindow

STOP_PHRASES = frozenset({"stop", "quit", "exit", "bye", "goodbye"})
YES_WORDS = frozenset({"yes", "y", "yeah", "yep"})
NO_WORDS = frozenset({"no", "n", "nope"})


class ChatSession:
    """One human-in-the-loop dialog; mirrors the environment's turn handling
    but takes the user side from ``input_fn``."""

    def __init__(
        self,
        policy,
        nlu: NluModel,
        channel_cfg: ChannelConfig,
        domain: Domain,
        window_size: int = 2,
        channel_seed: int = 0,
        debug: bool = False,
        input_fn: Callable[[str], str] = input,
        output_fn: Callable[[str], None] = print,
    ) -> None:
        self.policy = policy
        self.nlu = nlu
        self.channel_cfg = channel_cfg
        self.domain = domain
        self.window_size = window_size
        self.debug = debug
        self.input_fn = input_fn
        self.output_fn = output_fn
        self.rng = np.random.default_rng(channel_seed)
        self.vocab = domain.vocab()
        self.turns: list[TurnRecord] = []

    def _observe(self, hyp: Hypothesis, prev_action: int) -> Observation:
        filled = {s.slot_type for s in hyp.slots}
        index = self.vocab.idx(hyp.intent) if hyp.intent is not None else self.vocab.size
        return Observation(
            intent_index=index,
            slot_bits=tuple(1.0 if t in filled else 0.0 for t in self.domain.slot_types),
            asr_score=hyp.asr_score,
            nlu_intent_score=hyp.nlu_intent_score,
            nlu_slot_score=hyp.nlu_slot_score,
            prev_action=prev_action,
        )

    def _show_debug(self, hyp: Hypothesis) -> None:
        if not self.debug:
            return
        intent = hyp.intent.canonical() if hyp.intent else "Unknown"
        slots = ", ".join(f"{s.slot_type}={s.value}" for s in hyp.slots) or "-"
        self.output_fn(
            f"  [hyp] words: {' '.join(hyp.words)!r} intent: {intent} slots: {slots}"
        )
        self.output_fn(
            f"  [hyp] asr {hyp.asr_score:.3f} nlu-intent {hyp.nlu_intent_score:.3f} "
            f"nlu-slot {hyp.nlu_slot_score:.3f}"
        )

    def _record(self, text: str, act_kind: ActKind, hyp: Hypothesis, move: BotMove) -> None:
        # The human's true intent is unknown; the hypothesis stands in as the
        # reference, so transcripts stay schema-compatible.
        ref_intent = hyp.intent if hyp.intent is not None else self.vocab.token(1)
        user = UserAct(
            intent=ref_intent,
            slots=hyp.slots if hyp.intent is not None else (),
            words=tuple(text.lower().split()) or ("",),
            act_kind=act_kind,
        )
        self.turns.append(TurnRecord(user=user, hyp=hyp, bot=move, reward=0.0, correct=False))

    def run(self) -> EpisodeLog:
        self.output_fn("bot> hello, ask me about movies (type 'stop' to end)")
        window: ObsWindow = ()
        prev_action = 0
        pending_words: str | None = None
        text = self.input_fn("you> ").strip().lower()
        while True:
            if not text or text in STOP_PHRASES:
                break
            hyp = recognize(text.split(), self.nlu, self.channel_cfg, self.rng)
            self._show_debug(hyp)
            window = (window + (self._observe(hyp, prev_action),))[-self.window_size :]
            pending_words = text
            move = self.policy.act(window, hyp)
            done, text, prev_action, window = self._handle_move(move, hyp, window, pending_words)
            if done:
                break
        self.output_fn(f"bot> {self.domain.farewell}")
        return EpisodeLog(turns=list(self.turns), terminal_bonus=0.0, seed_triplet=(0, 0, 0))

    def _handle_move(
        self, move: BotMove, hyp: Hypothesis, window: ObsWindow, typed: str
    ) -> tuple[bool, str, int, ObsWindow]:
        """Play out one agent move, including any confirm loop; returns
        (session over, next typed utterance, prev action code, window)."""
        while True:
            if move.kind is MoveKind.EXECUTE:
                answer = self.domain.bot_response_text(hyp.intent, hyp.slots)
                self.output_fn(f"bot> {answer} <execute>")
                self._record(typed, ActKind.REQUEST, hyp, move)
                nxt = self.input_fn("you> ").strip().lower()
                return (not nxt or nxt in STOP_PHRASES), nxt, 1, window
            if move.kind is MoveKind.ELICIT:
                self.output_fn(f"bot> {self.domain.elicit_prompt} <elicit>")
                self._record(typed, ActKind.REQUEST, hyp, move)
                nxt = self.input_fn("you> ").strip().lower()
                return (not nxt or nxt in STOP_PHRASES), nxt, 3, window
            # Confirm: read a yes/no (channel bypassed), then re-consult policy.
            self.output_fn(f"bot> {self.domain.confirm_text(hyp)} <confirm>")
            self._record(typed, ActKind.REQUEST, hyp, move)
            reply = self.input_fn("you (yes/no)> ").strip().lower()
            if not reply or reply in STOP_PHRASES:
                return True, reply, 2, window
            if reply in YES_WORDS:
                hyp = replace(hyp, asr_score=1.0, nlu_intent_score=1.0, nlu_slot_score=1.0)
            window = (window + (self._observe(hyp, 2),))[-self.window_size :]
            self._show_debug(hyp)
            move = self.policy.act(window, hyp)
