"""Simulated ASR/NLU channel: lexical corruption with a scalar noise level,
word-error-rate measurement and calibration, a trainable bag-of-words intent
classifier, fuzzy slot extraction, and confidence-score models.

The corruption knob sigma maps to per-word substitution/deletion/insertion
probabilities through a logistic curve normalized so sigma=0 is a clean
channel. Calibration bisects sigma against a fixed-seed Monte Carlo WER
estimate until the measured corpus WER hits the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Hypothesis, IntentToken, SlotFill
from .corpus import ConfigurationError, IntentVocab, Lexicon, TemplateBank, realize_pattern
from .domain import Domain
from . import nn


class CalibrationError(RuntimeError):
    """Raised when the requested WER target is outside the channel's range."""


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, item_a in enumerate(a, start=1):
        current = [i]
        for j, item_b in enumerate(b, start=1):
            cost = 0 if item_a == item_b else 1
            current.append(min(previous[j] + 1, current[-1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def similarity(a: str, b: str) -> float:
    """Normalized character similarity: 1 - edit_distance / max length."""
    if not a and not b:
        return 1.0
    return 1.0 - edit_distance(a, b) / max(len(a), len(b))


def _logistic(x: float, k: float, x0: float) -> float:
    return 1.0 / (1.0 + math.exp(-k * (x - x0)))


@dataclass(frozen=True)
class ChannelConfig:
    """Noise level plus the constants mapping it to corruption probabilities.

    Each probability follows p(sigma) = p_max * (L(sigma) - L(0)) / (1 - L(0))
    with L the logistic curve, so p(0) = 0 and p is monotone in sigma.
    """

    sigma: float
    vocabulary: tuple[str, ...]
    p_max_sub: float = 0.45
    p_max_del: float = 0.22
    p_max_ins: float = 0.08
    steepness: float = 1.1
    midpoint: float = 2.6
    score_spread: float = 0.02
    score_floor: float = 0.05
    confusables: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.vocabulary:
            raise ValueError("channel vocabulary is empty")

    def _p(self, p_max: float) -> float:
        base = _logistic(0.0, self.steepness, self.midpoint)
        raw = _logistic(self.sigma, self.steepness, self.midpoint)
        return p_max * (raw - base) / (1.0 - base)

    @property
    def p_sub(self) -> float:
        return self._p(self.p_max_sub)

    @property
    def p_del(self) -> float:
        return self._p(self.p_max_del)

    @property
    def p_ins(self) -> float:
        return self._p(self.p_max_ins)

    def with_sigma(self, sigma: float) -> "ChannelConfig":
        return replace(self, sigma=sigma)

    def confusables_for(self, word: str) -> tuple[str, ...]:
        return self.confusables.get(word, ())

    @classmethod
    def build(cls, vocabulary: Sequence[str], sigma: float = 0.0, **kwargs) -> "ChannelConfig":
        """Precompute the confusable sets (vocabulary words within character
        edit distance 2, the word itself excluded)."""
        words = tuple(sorted(set(vocabulary)))
        confusables: dict[str, tuple[str, ...]] = {}
        for w in words:
            near = tuple(o for o in words if o != w and edit_distance(w, o) <= 2)
            confusables[w] = near
        return cls(sigma=sigma, vocabulary=words, confusables=confusables, **kwargs)

    @classmethod
    def for_domain(cls, domain: Domain, sigma: float = 0.0, **kwargs) -> "ChannelConfig":
        return cls.build(domain.word_universe(), sigma=sigma, **kwargs)


def corrupt(
    words: Sequence[str], cfg: ChannelConfig, rng: np.random.Generator
) -> tuple[list[str], list[bool]]:
    """Word-level corruption; flags mark substituted/inserted output words.

    All random draws happen for every input word regardless of sigma, so two
    runs with the same rng seed share randomness across noise levels (common
    random numbers for paired probes).
    """
    if not words:
        raise ValueError("corrupt needs a non-empty word list")
    p_del, p_sub, p_ins = cfg.p_del, cfg.p_sub, cfg.p_ins
    vocab = cfg.vocabulary
    out: list[str] = []
    flags: list[bool] = []
    for word in words:
        u_del, u_sub, c_sub, u_ins, c_ins = rng.random(5)
        if u_del < p_del:
            pass  # deleted: no output
        elif u_sub < p_sub:
            options = cfg.confusables_for(word)
            if not options:
                options = vocab
            out.append(options[int(c_sub * len(options))])
            flags.append(True)
        else:
            out.append(word)
            flags.append(False)
        if u_ins < p_ins:
            out.append(vocab[int(c_ins * len(vocab))])
            flags.append(True)
    return out, flags


def measure_wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """Corpus word error rate: total edit distance over total reference words."""
    if len(refs) != len(hyps):
        raise ValueError("reference and hypothesis corpora differ in length")
    if not refs:
        raise ValueError("empty reference corpus")
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("reference corpus has no words")
    total_edits = sum(edit_distance(list(r), list(h)) for r, h in zip(refs, hyps))
    return total_edits / total_ref


@dataclass
class CalibrationResult:
    sigma: float
    measured_wer: float
    target_wer: float
    tol: float
    probes: int

    def report(self) -> str:
        return (
            f"sigma={self.sigma:.6f} measured_wer={self.measured_wer:.4f} "
            f"target_wer={self.target_wer:.4f} tol={self.tol:.4f} probes={self.probes}"
        )


def calibrate(
    target_wer: float,
    sample: Sequence[Sequence[str]],
    cfg: ChannelConfig,
    tol: float = 0.01,
    seed: int = 0,
    min_utterances: int = 2000,
    max_sigma: float = 64.0,
) -> CalibrationResult:
    """Bisect sigma until the Monte Carlo WER estimate matches the target.

    Every probe reuses the same rng seed (common random numbers), which makes
    the estimated WER a monotone deterministic function of sigma.
    """
    if not 0.0 <= target_wer < 1.0:
        raise ValueError("target WER must be in [0, 1)")
    if not sample:
        raise ValueError("calibration sample is empty")
    utterances = [list(u) for u in sample]
    while len(utterances) < min_utterances:
        utterances.extend(list(u) for u in sample)
    utterances = utterances[: max(min_utterances, len(sample))]

    probes = 0

    def probe(sigma: float) -> float:
        nonlocal probes
        probes += 1
        probe_cfg = cfg.with_sigma(sigma)
        rng = np.random.default_rng(seed)
        hyps = [corrupt(u, probe_cfg, rng)[0] for u in utterances]
        return measure_wer(utterances, hyps)

    if target_wer == 0.0:
        return CalibrationResult(0.0, 0.0, target_wer, tol, probes)

    hi = 1.0
    hi_wer = probe(hi)
    while hi_wer < target_wer:
        hi *= 2.0
        if hi > max_sigma:
            raise CalibrationError(
                f"target WER {target_wer} outside achievable range [0, {hi_wer:.4f}]"
            )
        hi_wer = probe(hi)

    lo, lo_wer = 0.0, 0.0
    best_sigma, best_wer = hi, hi_wer
    for _ in range(60):
        if abs(best_wer - target_wer) <= tol:
            break
        mid = 0.5 * (lo + hi)
        mid_wer = probe(mid)
        if abs(mid_wer - target_wer) < abs(best_wer - target_wer):
            best_sigma, best_wer = mid, mid_wer
        if mid_wer < target_wer:
            lo, lo_wer = mid, mid_wer
        else:
            hi, hi_wer = mid, mid_wer
    if abs(best_wer - target_wer) > tol:
        raise CalibrationError(
            f"bisection stalled at WER {best_wer:.4f} for target {target_wer}"
        )
    return CalibrationResult(best_sigma, best_wer, target_wer, tol, probes)


class NluModel:
    """Bag-of-words intent classifier plus fuzzy lexicon slot matching.

    Features replace exact lexicon-value n-grams with slot-type markers, the
    same masking at training and recognition time.
    """

    def __init__(
        self,
        intents: tuple[IntentToken, ...],
        feature_words: tuple[str, ...],
        lexicon: Lexicon,
        slot_threshold: float = 0.8,
        seed: int = 0,
    ) -> None:
        if not 0.0 < slot_threshold <= 1.0:
            raise ValueError("slot threshold must be in (0, 1]")
        self.intents = intents
        self.lexicon = lexicon
        self.slot_threshold = slot_threshold
        markers = tuple(f"<{t}>" for t in sorted(lexicon.values))
        self.feature_index = {w: i for i, w in enumerate(tuple(sorted(set(feature_words))) + markers)}
        self.n_features = len(self.feature_index)
        self.params = nn.ParamSet()
        rng = np.random.default_rng(seed)
        self.linear = nn.Affine(self.params, "nlu", self.n_features, len(intents), rng)
        self._value_ngrams = {
            slot_type: {v: v.split() for v in values}
            for slot_type, values in lexicon.values.items()
        }
        self._max_value_words = max(
            (len(v.split()) for vals in lexicon.values.values() for v in vals), default=1
        )

    def mask_slot_values(self, words: Sequence[str]) -> list[str]:
        """Replace exact lexicon-value n-grams with their slot-type marker."""
        tokens = list(words)
        for slot_type in sorted(self.lexicon.values):
            values = set(self.lexicon.values[slot_type])
            for width in range(self._max_value_words, 0, -1):
                i = 0
                while i + width <= len(tokens):
                    candidate = " ".join(tokens[i : i + width])
                    if candidate in values:
                        tokens[i : i + width] = [f"<{slot_type}>"]
                    i += 1
        return tokens

    def featurize(self, words: Sequence[str]) -> np.ndarray:
        x = np.zeros(self.n_features)
        for token in self.mask_slot_values(words):
            idx = self.feature_index.get(token)
            if idx is not None:
                x[idx] += 1.0
        return x

    def classify(self, words: Sequence[str]) -> tuple[IntentToken | None, float]:
        """Most likely intent and its softmax probability; None when the
        input carries no usable evidence."""
        x = self.featurize(words)
        logits = x @ self.linear.W.value + self.linear.b.value
        probs = nn.softmax(logits)
        best = int(np.argmax(probs))
        if not words or not np.any(x):
            return None, float(probs[best])
        return self.intents[best], float(probs[best])

    def extract_slots(
        self, words: Sequence[str], intent: IntentToken
    ) -> tuple[tuple[SlotFill, ...], float]:
        """Best fuzzy lexicon match per slot type of the intent.

        Returns the accepted fills and the slot confidence (the weakest
        similarity across the intent's slot types; 1.0 for slotless intents).
        """
        if not intent.slot_types:
            return (), 1.0
        fills: list[SlotFill] = []
        score = 1.0
        tokens = list(words)
        for slot_type in intent.slot_types:
            best_sim, best_value = 0.0, None
            for value in self.lexicon.for_type(slot_type):
                value_width = len(value.split())
                for width in range(1, min(len(tokens), value_width + 1) + 1):
                    for i in range(len(tokens) - width + 1):
                        sim = similarity(" ".join(tokens[i : i + width]), value)
                        if sim > best_sim:
                            best_sim, best_value = sim, value
            if best_value is not None and best_sim >= self.slot_threshold:
                fills.append(SlotFill(slot_type, best_value))
            score = min(score, best_sim)
        return tuple(fills), score

    def save(self, path: str) -> None:
        meta = {
            "model": "nlu",
            "intents": [t.canonical() for t in self.intents],
            "feature_words": [
                w for w in self.feature_index if not (w.startswith("<") and w.endswith(">"))
            ],
            "lexicon": {k: list(v) for k, v in self.lexicon.values.items()},
            "slot_threshold": self.slot_threshold,
        }
        nn.save_params(path, self.params, meta)

    @classmethod
    def load(cls, path: str) -> "NluModel":
        arrays, meta = nn.load_params(path)
        if meta.get("model") != "nlu":
            raise ValueError(f"{path} is not an NLU checkpoint")
        model = cls(
            intents=tuple(IntentToken.parse(n) for n in meta["intents"]),
            feature_words=tuple(meta["feature_words"]),
            lexicon=Lexicon({k: tuple(v) for k, v in meta["lexicon"].items()}),
            slot_threshold=meta["slot_threshold"],
        )
        for p in model.params:
            p.value[...] = arrays[p.name]
        return model


def train_nlu(
    domain: Domain,
    cfg: ChannelConfig,
    n_samples: int = 4000,
    seed: int = 0,
    epochs: int = 40,
    lr: float = 0.05,
    batch_size: int = 32,
    weight_decay: float = 0.001,
) -> NluModel:
    """Train the intent classifier on template realizations, half clean and
    half corrupted at the config's sigma.

    The small weight decay keeps the softmax probabilities informative instead
    of saturating at 1, while clean-utterance confidence stays above 0.9.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    vocab: IntentVocab = domain.vocab()
    intents = vocab.intent_tokens()
    model = NluModel(
        intents,
        feature_words=cfg.vocabulary,
        lexicon=domain.lexicon,
        seed=seed,
    )
    rng = np.random.default_rng(seed)

    pairs: list[tuple[IntentToken, str]] = []
    for token in intents:
        for pattern in domain.templates.for_token(token):
            pairs.append((token, pattern))

    features = np.zeros((n_samples, model.n_features))
    labels = np.zeros(n_samples, dtype=np.intp)
    label_of = {t.canonical(): i for i, t in enumerate(intents)}
    for i in range(n_samples):
        token, pattern = pairs[i % len(pairs)]
        text, _ = realize_pattern(pattern, domain.lexicon, rng)
        words = text.lower().split()
        if i % 2 == 1 and cfg.sigma > 0:
            words, _ = corrupt(words, cfg, rng)
        features[i] = model.featurize(words)
        labels[i] = label_of[token.canonical()]

    optimizer = nn.Adam(lr)
    n = n_samples
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            logits, cache = model.linear.forward(features[batch])
            loss, dlogits = nn.softmax_xent_batch(logits, labels[batch])
            if not math.isfinite(loss):
                raise nn.TrainingError(f"nlu training diverged (loss={loss})")
            model.linear.backward(dlogits, cache)
            model.linear.W.grad += weight_decay * model.linear.W.value
            optimizer.step(model.params)
    return model


def recognize(
    words: Sequence[str],
    model: NluModel,
    cfg: ChannelConfig,
    rng: np.random.Generator,
    bypass_corruption: bool = False,
) -> Hypothesis:
    """Full channel pipeline: corrupt, score, classify, extract slots.

    Yes/no confirmation answers set ``bypass_corruption`` and pass through
    clean with perfect scores.
    """
    if bypass_corruption:
        decoded, asr_score = list(words), 1.0
    else:
        decoded, flags = corrupt(words, cfg, rng)
        if decoded:
            confidences = []
            for flag in flags:
                u = rng.uniform(0.5, 1.0)
                noise = rng.normal(0.0, cfg.score_spread)
                c = 1.0 - (u if flag else 0.0) - noise
                confidences.append(min(1.0, max(cfg.score_floor, c)))
            asr_score = float(np.exp(np.mean(np.log(confidences))))
        else:
            asr_score = cfg.score_floor

    intent, intent_score = model.classify(decoded)
    if intent is None:
        return Hypothesis(
            words=tuple(decoded),
            intent=None,
            slots=(),
            asr_score=asr_score,
            nlu_intent_score=intent_score,
            nlu_slot_score=1.0,
        )
    slots, slot_score = model.extract_slots(decoded, intent)
    if not intent.slot_types:
        slot_score = 1.0
    return Hypothesis(
        words=tuple(decoded),
        intent=intent,
        slots=slots,
        asr_score=asr_score,
        nlu_intent_score=intent_score,
        nlu_slot_score=max(0.0, min(1.0, slot_score)),
    )


def sample_utterances(domain: Domain, n: int, seed: int) -> list[list[str]]:
    """Realized template utterances for calibration probes."""
    rng = np.random.default_rng(seed)
    pairs = []
    for token in domain.vocab().intent_tokens():
        for pattern in domain.templates.for_token(token):
            pairs.append(pattern)
    out = []
    for i in range(n):
        text, _ = realize_pattern(pairs[i % len(pairs)], domain.lexicon, rng)
        out.append(text.lower().split())
    return out
