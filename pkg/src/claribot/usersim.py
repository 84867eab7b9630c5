"""Simulated user: samples the next intent from a language model, realizes an
utterance from templates and lexicon, and produces clarification behavior
(yes/no for a confirm, a verbatim repeat for an elicit).

The LM advances only when the agent executes (or at the opening); clarifying
exchanges never consume LM tokens. One clarification budget guards against
infinite confirm/elicit loops: once it runs out on a single request, the user
abandons the dialog.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ActKind,
    BotMove,
    END_TOKEN,
    IntentToken,
    MoveKind,
    ProtocolError,
    START_TOKEN,
    TokenKind,
    UserAct,
    matches,
)
from .corpus import Lexicon, TemplateBank, realize_pattern
from .lm import sample_next


def realize_utterance(
    token: IntentToken,
    templates: TemplateBank,
    lexicon: Lexicon,
    rng: np.random.Generator,
) -> UserAct:
    """Uniformly pick a template and fill placeholders with uniform lexicon draws."""
    if token.kind is not TokenKind.INTENT:
        raise ValueError(f"cannot realize special token {token.canonical()!r}")
    patterns = templates.for_token(token)
    pattern = patterns[int(rng.integers(len(patterns)))]
    text, fills = realize_pattern(pattern, lexicon, rng)
    words = tuple(text.lower().split())
    return UserAct(intent=token, slots=fills, words=words, act_kind=ActKind.REQUEST)


@dataclass
class PendingRequest:
    act: UserAct
    repeats_left: int


@dataclass
class SimState:
    """Per-episode simulator state; the rng stream is user-owned so the user's
    behavior depends only on the agent's move kinds, never on agent-internal
    randomness."""

    rng: np.random.Generator
    history: list[IntentToken] = field(default_factory=lambda: [START_TOKEN])
    contexts: list[str] = field(default_factory=lambda: [""])
    pending: PendingRequest | None = None
    terminated: bool = False

    def reset_for_retry(self) -> None:
        self.history = [START_TOKEN]
        self.contexts = [""]
        self.pending = None
        self.terminated = False


class UserSimulator:
    def __init__(
        self,
        model,
        templates: TemplateBank,
        lexicon: Lexicon,
        repeat_budget: int = 5,
    ) -> None:
        self.model = model
        self.templates = templates
        self.lexicon = lexicon
        self.repeat_budget = repeat_budget

    def new_state(self, seed: int) -> SimState:
        return SimState(rng=np.random.default_rng(seed))

    def observe_response(self, state: SimState, text: str) -> None:
        """Record the agent's text response to the most recent request; it
        becomes LM conditioning context for the next intent."""
        state.contexts[-1] = text

    def next_user_act(self, state: SimState, last_move: BotMove | None) -> UserAct:
        """The user's reaction to the agent's last move (None = dialog opening)."""
        if state.terminated:
            raise ProtocolError("user already terminated the dialog")

        if last_move is None or last_move.kind is MoveKind.EXECUTE:
            return self._advance(state)

        if state.pending is None:
            raise ProtocolError(f"{last_move.kind.value} with no pending request")
        if state.pending.repeats_left <= 0:
            return self._terminate(state)
        state.pending.repeats_left -= 1
        ref = state.pending.act

        if last_move.kind is MoveKind.CONFIRM:
            assert last_move.payload is not None
            agree = matches(last_move.payload, ref)
            return UserAct(
                intent=ref.intent,
                slots=ref.slots,
                words=("yes",) if agree else ("no",),
                act_kind=ActKind.CONFIRM_YES if agree else ActKind.CONFIRM_NO,
            )
        # Elicit: repeat the original utterance verbatim.
        return UserAct(
            intent=ref.intent,
            slots=ref.slots,
            words=ref.words,
            act_kind=ActKind.REPEAT_FOR_ELICIT,
        )

    def _advance(self, state: SimState) -> UserAct:
        token = sample_next(self.model, state.history, state.contexts, state.rng)
        if token == END_TOKEN:
            state.history.append(END_TOKEN)
            return self._terminate(state)
        act = realize_utterance(token, self.templates, self.lexicon, state.rng)
        state.history.append(token)
        state.contexts.append("")
        state.pending = PendingRequest(act, self.repeat_budget)
        return act

    def _terminate(self, state: SimState) -> UserAct:
        state.terminated = True
        state.pending = None
        return UserAct(intent=END_TOKEN, slots=(), words=(), act_kind=ActKind.TERMINATE)
