"""Annotated dialog corpora: loading, validation, splitting, and synthesis.

Corpus files are UTF-8 JSON lines, one dialog per line; each line is the
ordered list of turn objects ``{"speaker", "text", "intent", "slots"}`` (intent
and slots on user turns only). Template banks and lexicons are JSON objects
keyed by canonical token string / slot type.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .domain import Domain

from .core import (
    CorpusFormatError,
    Dialog,
    END_TOKEN,
    IntentToken,
    SlotFill,
    START_TOKEN,
    STOP_INTENT_NAMES,
    TokenKind,
    Turn,
    tokenize_dialog,
)

PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


class ConfigurationError(ValueError):
    """Raised when templates/lexicon/generator settings are inconsistent."""


@dataclass
class Corpus:
    dialogs: list[Dialog]
    name: str = "corpus"

    @property
    def n_dialogs(self) -> int:
        return len(self.dialogs)

    @property
    def n_user_turns(self) -> int:
        return sum(len(d.user_turns()) for d in self.dialogs)

    def metadata(self) -> dict:
        return {"name": self.name, "dialogs": self.n_dialogs, "user_turns": self.n_user_turns}


def _turn_to_obj(turn: Turn) -> dict:
    obj: dict = {"speaker": turn.speaker, "text": turn.text}
    if turn.speaker == "user":
        obj["intent"] = turn.intent
        obj["slots"] = [{"type": s.slot_type, "value": s.value} for s in turn.slots]
    return obj


def _turn_from_obj(obj: dict, where: str) -> Turn:
    if not isinstance(obj, dict) or "speaker" not in obj or "text" not in obj:
        raise CorpusFormatError(f"{where}: malformed turn record")
    speaker = obj["speaker"]
    if speaker == "bot":
        return Turn("bot", obj["text"])
    if speaker != "user":
        raise CorpusFormatError(f"{where}: unknown speaker {speaker!r}")
    slots = []
    for s in obj.get("slots", []):
        if "type" not in s or "value" not in s:
            raise CorpusFormatError(f"{where}: malformed slot record")
        slots.append(SlotFill(s["type"], s["value"]))
    return Turn("user", obj["text"], intent=obj.get("intent"), slots=tuple(slots))


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dialog in corpus.dialogs:
            line = json.dumps([_turn_to_obj(t) for t in dialog.turns], ensure_ascii=False)
            fh.write(line + "\n")


def load_corpus(
    path: str,
    name: str | None = None,
    known_intents: Iterable[str] | None = None,
    known_slot_types: Iterable[str] | None = None,
) -> Corpus:
    """Load and validate a JSONL corpus; rejects on the first bad line.

    When intent/slot-type inventories are given, records referencing anything
    outside them are rejected.
    """
    intents = set(known_intents) | set(STOP_INTENT_NAMES) if known_intents is not None else None
    slot_types = set(known_slot_types) if known_slot_types is not None else None
    dialogs: list[Dialog] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"line {lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(raw, list):
                raise CorpusFormatError(f"{where}: dialog must be a list of turns")
            dialog = Dialog([_turn_from_obj(obj, where) for obj in raw])
            for index, turn in enumerate(dialog.turns):
                if turn.speaker != "user":
                    continue
                if not turn.intent:
                    raise CorpusFormatError(f"{where}: user turn {index} missing intent")
                if intents is not None and turn.intent not in intents:
                    raise CorpusFormatError(f"{where}: unknown intent {turn.intent!r}")
                for s in turn.slots:
                    if slot_types is not None and s.slot_type not in slot_types:
                        raise CorpusFormatError(f"{where}: unknown slot type {s.slot_type!r}")
            dialogs.append(dialog)
    return Corpus(dialogs, name=name or path)


@dataclass
class TemplateBank:
    """Utterance patterns per intent token; placeholders are ``{slot_type}``."""

    patterns: dict[str, tuple[str, ...]]

    def for_token(self, token: IntentToken) -> tuple[str, ...]:
        key = token.canonical()
        if key not in self.patterns or not self.patterns[key]:
            raise ConfigurationError(f"no templates for token {key!r}")
        return self.patterns[key]

    def validate(self, tokens: Iterable[IntentToken]) -> None:
        for token in tokens:
            if token.kind is not TokenKind.INTENT:
                continue
            for pattern in self.for_token(token):
                holders = tuple(sorted(set(PLACEHOLDER_RE.findall(pattern))))
                if holders != token.slot_types:
                    raise ConfigurationError(
                        f"template {pattern!r} placeholders {holders} do not match "
                        f"slot types {token.slot_types} of {token.canonical()!r}"
                    )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({k: list(v) for k, v in self.patterns.items()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "TemplateBank":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({k: tuple(v) for k, v in raw.items()})


@dataclass
class Lexicon:
    """Slot values per slot type."""

    values: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for slot_type, vals in self.values.items():
            if not vals:
                raise ConfigurationError(f"lexicon for {slot_type!r} is empty")
            if len(set(vals)) != len(vals):
                raise ConfigurationError(f"duplicate values in lexicon for {slot_type!r}")

    def for_type(self, slot_type: str) -> tuple[str, ...]:
        if slot_type not in self.values:
            raise ConfigurationError(f"no lexicon for slot type {slot_type!r}")
        return self.values[slot_type]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({k: list(v) for k, v in self.values.items()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Lexicon":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({k: tuple(v) for k, v in raw.items()})


@dataclass
class GeneratorSpec:
    """Ground-truth dialog generator: intent inventory plus context rules.

    Rules map a history suffix (tuple of canonical token strings, most recent
    last; "Start" keys the opening) to positive successor weights over
    canonical strings including "End". Lookup picks the longest matching
    suffix. The last bot-response topic is implied by the most recent token
    because bot responses are a fixed template per intent.
    """

    tokens: tuple[IntentToken, ...]
    rules: dict[tuple[str, ...], dict[str, float]]
    min_turns: int = 1
    max_turns: int = 12
    end_scale: float = 1.0  # length knob: scales every rule's End weight
    stop_intent: str = "AMAZON.StopIntent"

    def __post_init__(self) -> None:
        if self.end_scale <= 0:
            raise ConfigurationError("end_scale must be positive")
        self._by_name = {t.canonical(): t for t in self.tokens}
        self._max_window = max((len(k) for k in self.rules), default=1)

    def successor_weights(self, history: list[IntentToken]) -> dict[str, float]:
        names = [t.canonical() for t in history]
        for width in range(min(self._max_window, len(names)), 0, -1):
            key = tuple(names[-width:])
            if key in self.rules:
                weights = self.rules[key]
                if self.end_scale != 1.0 and "End" in weights:
                    weights = dict(weights)
                    weights["End"] *= self.end_scale
                return weights
        raise ConfigurationError(f"no context rule matches history {names[-3:]}")

    def token_for(self, name: str) -> IntentToken:
        if name == "End":
            return END_TOKEN
        return self._by_name[name]

    def _edges(self, state: str) -> set[str]:
        """All successors that can follow ``state`` under any matching rule."""
        out: set[str] = set()
        for key, weights in self.rules.items():
            if key[-1] == state:
                out |= set(weights)
        history = [START_TOKEN] if state == "Start" else [START_TOKEN, self._by_name[state]]
        out |= set(self.successor_weights(history))
        return out

    def validate(self) -> None:
        for key, weights in self.rules.items():
            if not weights:
                raise ConfigurationError(f"rule {key} has no successors")
            for name, weight in weights.items():
                if weight <= 0:
                    raise ConfigurationError(f"rule {key} has non-positive weight for {name!r}")
                if name != "End" and name not in self._by_name:
                    raise ConfigurationError(f"rule {key} names unknown token {name!r}")
        # Every intent reachable from Start, End reachable from every intent.
        reachable: set[str] = set()
        frontier = ["Start"]
        while frontier:
            for name in self._edges(frontier.pop()):
                if name != "End" and name not in reachable:
                    reachable.add(name)
                    frontier.append(name)
        missing = set(self._by_name) - reachable
        if missing:
            raise ConfigurationError(f"intents unreachable from Start: {sorted(missing)}")
        for name in self._by_name:
            seen, frontier = {name}, [name]
            found_end = False
            while frontier and not found_end:
                for succ in self._edges(frontier.pop()):
                    if succ == "End":
                        found_end = True
                        break
                    if succ not in seen:
                        seen.add(succ)
                        frontier.append(succ)
            if not found_end:
                raise ConfigurationError(f"End unreachable from {name!r}")

    def sample_sequence(self, rng: np.random.Generator) -> list[IntentToken]:
        """Draw one token sequence [Start, ..., End] honoring the rules."""
        history = [START_TOKEN]
        while True:
            n_intents = len(history) - 1
            if n_intents >= self.max_turns:
                history.append(END_TOKEN)
                return history
            weights = dict(self.successor_weights(history))
            if n_intents < self.min_turns:
                weights.pop("End", None)
                if not weights:
                    raise ConfigurationError("min_turns unreachable under the context rules")
            names = sorted(weights)
            probs = np.array([weights[n] for n in names], dtype=np.float64)
            probs /= probs.sum()
            choice = names[int(rng.choice(len(names), p=probs))]
            if choice == "End":
                history.append(END_TOKEN)
                return history
            history.append(self.token_for(choice))


def realize_pattern(
    pattern: str, lexicon: Lexicon, rng: np.random.Generator
) -> tuple[str, tuple[SlotFill, ...]]:
    """Fill a template's placeholders with uniformly drawn lexicon values."""
    fills: list[SlotFill] = []

    def _fill(match: re.Match) -> str:
        slot_type = match.group(1)
        options = lexicon.for_type(slot_type)
        value = options[int(rng.integers(len(options)))]
        fills.append(SlotFill(slot_type, value))
        return value

    text = PLACEHOLDER_RE.sub(_fill, pattern)
    return text, tuple(fills)


def generate_synthetic_corpus(domain: "Domain", n_dialogs: int, seed: int) -> Corpus:
    """Sample a ground-truth corpus from the domain's generator spec.

    Deterministic given the seed; every dialog ends with a stop turn that
    tokenizes to End.
    """
    if n_dialogs < 1:
        raise ValueError("n_dialogs must be >= 1")
    domain.generator.validate()
    rng = np.random.default_rng(seed)
    dialogs: list[Dialog] = []
    for _ in range(n_dialogs):
        sequence = domain.generator.sample_sequence(rng)
        turns: list[Turn] = []
        for token in sequence[1:-1]:
            patterns = domain.templates.for_token(token)
            pattern = patterns[int(rng.integers(len(patterns)))]
            text, fills = realize_pattern(pattern, domain.lexicon, rng)
            turns.append(Turn("user", text, intent=token.name, slots=fills))
            turns.append(Turn("bot", domain.bot_response_text(token, fills)))
        stop_text = domain.stop_utterances[int(rng.integers(len(domain.stop_utterances)))]
        turns.append(Turn("user", stop_text, intent=domain.generator.stop_intent))
        turns.append(Turn("bot", domain.farewell))
        dialogs.append(Dialog(turns))
    return Corpus(dialogs, name=f"synthetic-{seed}")


def split(
    corpus: Corpus,
    ratios: tuple[float, float, float],
    seed: int,
    allow_empty: bool = False,
) -> tuple[Corpus, Corpus, Corpus]:
    """Dialog-level partition into train/dev/test with rounded sizes."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")
    low = 0.0 if allow_empty else 1e-12
    if any(r < low for r in ratios):
        raise ValueError(f"ratios {ratios} must be positive")
    n = corpus.n_dialogs
    if n < 3 and not allow_empty:
        raise ValueError(f"corpus of {n} dialogs is too small to split")
    sizes = [round(r * n) for r in ratios]
    sizes[0] += n - sum(sizes)
    order = np.random.default_rng(seed).permutation(n)
    parts = []
    offset = 0
    for part_name, size in zip(("train", "dev", "test"), sizes):
        picked = sorted(order[offset : offset + size])
        parts.append(Corpus([corpus.dialogs[i] for i in picked], name=f"{corpus.name}-{part_name}"))
        offset += size
    return parts[0], parts[1], parts[2]


@dataclass
class IntentVocab:
    """Token inventory with a stable index map: Start=0, End=1, rest sorted."""

    tokens: tuple[IntentToken, ...]
    index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.index = {t.canonical(): i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def start_index(self) -> int:
        return 0

    @property
    def end_index(self) -> int:
        return 1

    def idx(self, token: IntentToken) -> int:
        return self.index[token.canonical()]

    def token(self, i: int) -> IntentToken:
        return self.tokens[i]

    def intent_tokens(self) -> tuple[IntentToken, ...]:
        return self.tokens[2:]

    @classmethod
    def from_intents(cls, intents: Iterable[IntentToken]) -> "IntentVocab":
        body = sorted({t.canonical() for t in intents})
        tokens = (START_TOKEN, END_TOKEN) + tuple(IntentToken.parse(n) for n in body)
        return cls(tokens)


def build_vocab(corpus: Corpus) -> IntentVocab:
    if corpus.n_dialogs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    intents: set[IntentToken] = set()
    for dialog in corpus.dialogs:
        for token in tokenize_dialog(dialog):
            if token.kind is TokenKind.INTENT:
                intents.add(token)
    return IntentVocab.from_intents(intents)
