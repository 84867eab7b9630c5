"""Shared dialog vocabulary: intent tokens, dialog records, rewards, and returns.

Everything downstream (corpus handling, the user simulator, the noisy channel,
the MDP environment, and the agents) speaks in terms of these types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable


class CorpusFormatError(ValueError):
    """Raised when a dialog record violates the corpus schema."""


class ProtocolError(RuntimeError):
    """Raised when a dialog driver is used after its episode terminated."""


START_NAME = "Start"
END_NAME = "End"

# Intent annotations that fold into the End token during tokenization.
STOP_INTENT_NAMES = frozenset({"AMAZON.StopIntent", "AMAZON.CancelIntent"})


class TokenKind(Enum):
    START = "start"
    END = "end"
    INTENT = "intent"


@dataclass(frozen=True)
class IntentToken:
    """One unit of the intent-sequence alphabet: an intent plus its slot types.

    The canonical string form is the intent name followed by "+"-joined sorted
    slot types (e.g. ``GetGenreMoviesIntent+genre``); the Start/End specials
    render as ``Start`` / ``End``. ``parse`` round-trips ``canonical``.
    """

    kind: TokenKind
    name: str = ""
    slot_types: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        normalized = tuple(sorted(set(self.slot_types)))
        object.__setattr__(self, "slot_types", normalized)
        if self.kind is TokenKind.INTENT:
            if not self.name:
                raise ValueError("intent tokens need a non-empty name")
            if self.name in (START_NAME, END_NAME):
                raise ValueError(f"intent name {self.name!r} shadows a special token")
        else:
            if self.name or self.slot_types:
                raise ValueError("Start/End tokens carry no name and no slot types")

    @classmethod
    def start(cls) -> "IntentToken":
        return cls(TokenKind.START)

    @classmethod
    def end(cls) -> "IntentToken":
        return cls(TokenKind.END)

    @classmethod
    def intent(cls, name: str, slot_types: Iterable[str] = ()) -> "IntentToken":
        return cls(TokenKind.INTENT, name, tuple(slot_types))

    def canonical(self) -> str:
        if self.kind is TokenKind.START:
            return START_NAME
        if self.kind is TokenKind.END:
            return END_NAME
        return "+".join((self.name,) + self.slot_types)

    @classmethod
    def parse(cls, text: str) -> "IntentToken":
        if text == START_NAME:
            return cls.start()
        if text == END_NAME:
            return cls.end()
        parts = text.split("+")
        if not parts[0]:
            raise ValueError(f"cannot parse intent token from {text!r}")
        return cls.intent(parts[0], parts[1:])

    def __str__(self) -> str:
        return self.canonical()


START_TOKEN = IntentToken.start()
END_TOKEN = IntentToken.end()


@dataclass(frozen=True)
class SlotFill:
    """A typed entity value, e.g. (genre, "science fiction")."""

    slot_type: str
    value: str

    def __post_init__(self) -> None:
        if not self.value:
            raise ValueError(f"slot {self.slot_type!r} has an empty value")


def _normalize_value(value: str) -> str:
    return " ".join(value.lower().split())


def slot_key(slots: Iterable[SlotFill]) -> tuple[tuple[str, str], ...]:
    """Order- and case-insensitive comparison key for slot fill multisets."""
    return tuple(sorted((s.slot_type, _normalize_value(s.value)) for s in slots))


class ActKind(Enum):
    REQUEST = "request"
    CONFIRM_YES = "confirm_yes"
    CONFIRM_NO = "confirm_no"
    REPEAT_FOR_ELICIT = "repeat_for_elicit"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class UserAct:
    """Ground-truth user turn: intent, slot fills, and the realized words.

    Clarification acts (yes/no/repeat) carry the intent and slots of the
    pending request they refer to.
    """

    intent: IntentToken
    slots: tuple[SlotFill, ...]
    words: tuple[str, ...]
    act_kind: ActKind

    def __post_init__(self) -> None:
        want = self.intent.slot_types
        got = tuple(sorted(s.slot_type for s in self.slots))
        if tuple(sorted(want)) != got:
            raise ValueError(f"slot fills {got} do not match intent slot types {want}")
        if self.act_kind is not ActKind.TERMINATE and not self.words:
            raise ValueError("only Terminate acts may have empty words")


@dataclass(frozen=True)
class Hypothesis:
    """What the channel decoded: words, intent guess, slots, and confidences.

    ``intent`` is None when the channel could not recognize any intent.
    """

    words: tuple[str, ...]
    intent: IntentToken | None
    slots: tuple[SlotFill, ...]
    asr_score: float
    nlu_intent_score: float
    nlu_slot_score: float

    def __post_init__(self) -> None:
        for label, score in (
            ("asr_score", self.asr_score),
            ("nlu_intent_score", self.nlu_intent_score),
            ("nlu_slot_score", self.nlu_slot_score),
        ):
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{label}={score} outside [0, 1]")
        slotless = self.intent is None or not self.intent.slot_types
        if slotless and self.nlu_slot_score != 1.0:
            raise ValueError("slotless hypotheses must have nlu_slot_score == 1.0")


def matches(hyp: Hypothesis, ref: UserAct) -> bool:
    """Execution-success test: hypothesis intent and slots equal the reference.

    Slot values compare case-insensitively after whitespace normalization.
    """
    if hyp.intent is None or hyp.intent != ref.intent:
        return False
    return slot_key(hyp.slots) == slot_key(ref.slots)


class MoveKind(Enum):
    EXECUTE = "execute"
    CONFIRM = "confirm"
    ELICIT = "elicit"


@dataclass(frozen=True)
class BotMove:
    """One of the agent's three actions; Execute/Confirm carry the hypothesis."""

    kind: MoveKind
    payload: Hypothesis | None = None

    def __post_init__(self) -> None:
        if self.kind is MoveKind.ELICIT:
            if self.payload is not None:
                raise ValueError("Elicit carries no payload")
        elif self.payload is None:
            raise ValueError(f"{self.kind.value} requires a hypothesis payload")


class TerminateEvent:
    """Environment-side end-of-dialog event (the user leaving)."""

    _instance: "TerminateEvent | None" = None

    def __new__(cls) -> "TerminateEvent":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "TERMINATE"


TERMINATE = TerminateEvent()


@dataclass(frozen=True)
class RewardTable:
    """The environment's reward values; defaults are the deployed ones."""

    execute_correct: float = 10.0
    execute_wrong: float = -12.0
    confirm: float = -3.0
    elicit: float = -6.0
    terminate_after_correct: float = 1.0
    terminate_after_wrong: float = -5.0
    terminate_no_execute: float = 0.0

    def for_move(self, kind: MoveKind, correct: bool | None = None) -> float:
        if kind is MoveKind.EXECUTE:
            if correct is None:
                raise ValueError("execute reward needs a correctness context")
            return self.execute_correct if correct else self.execute_wrong
        if kind is MoveKind.CONFIRM:
            return self.confirm
        return self.elicit

    def terminal_bonus(self, last_execute_correct: bool | None) -> float:
        if last_execute_correct is None:
            return self.terminate_no_execute
        if last_execute_correct:
            return self.terminate_after_correct
        return self.terminate_after_wrong


DEFAULT_REWARDS = RewardTable()


def reward(
    event: BotMove | MoveKind | TerminateEvent,
    correct: bool | None = None,
    table: RewardTable = DEFAULT_REWARDS,
) -> float:
    """Reward for a single agent move or the terminate event.

    ``correct`` is the correctness context: for Execute, whether hyp equals
    ref; for Terminate, the correctness of the most recent execute (None when
    no execute ever happened, which yields 0).
    """
    if isinstance(event, TerminateEvent):
        return table.terminal_bonus(correct)
    kind = event.kind if isinstance(event, BotMove) else event
    return table.for_move(kind, correct)


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    """Sum of gamma**i * rewards[i]."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    values = list(rewards)
    if not values:
        raise ValueError("rewards must be non-empty")
    total = 0.0
    weight = 1.0
    for r in values:
        total += weight * r
        weight *= gamma
    return total


@dataclass
class Turn:
    """One annotated dialog turn; intent/slots are present on user turns only."""

    speaker: str
    text: str
    intent: str | None = None
    slots: tuple[SlotFill, ...] = ()

    def __post_init__(self) -> None:
        if self.speaker not in ("user", "bot"):
            raise CorpusFormatError(f"unknown speaker {self.speaker!r}")


@dataclass
class Dialog:
    turns: list[Turn] = field(default_factory=list)

    def user_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker == "user"]


def tokenize_dialog(dialog: Dialog) -> list[IntentToken]:
    """Map an annotated dialog to its intent-token sequence.

    One token per user turn, bracketed by Start/End; stop-style intents fold
    into the End token. Missing intent annotations are corpus-format errors.
    """
    tokens = [START_TOKEN]
    for index, turn in enumerate(dialog.turns):
        if turn.speaker != "user":
            continue
        if not turn.intent:
            raise CorpusFormatError(f"user turn {index} is missing an intent annotation")
        if turn.intent in STOP_INTENT_NAMES:
            break
        tokens.append(IntentToken.intent(turn.intent, (s.slot_type for s in turn.slots)))
    tokens.append(END_TOKEN)
    return tokens


@dataclass
class TurnRecord:
    """One agent decision: the reference act, the hypothesis, the move taken."""

    user: UserAct
    hyp: Hypothesis
    bot: BotMove
    reward: float
    correct: bool


@dataclass
class EpisodeLog:
    """Full transcript of one episode; terminal_bonus is 0 only when the
    episode ended without any execute."""

    turns: list[TurnRecord]
    terminal_bonus: float
    seed_triplet: tuple[int, int, int]

    def rewards(self) -> list[float]:
        return [t.reward for t in self.turns]
