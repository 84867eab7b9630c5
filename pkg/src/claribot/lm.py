"""Intent-sequence language models: bigram baseline and recurrent (RNN/GRU) LMs.

Sequences run Start..End; every token after Start is a prediction target (End
included), and perplexity is exp(total NLL / total predicted tokens). The
recurrent models can optionally condition on the agent's previous text
response through a jointly-trained hashed bag-of-words embedding.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .core import Dialog, IntentToken, tokenize_dialog
from .corpus import Corpus, IntentVocab
from . import nn


@dataclass
class TokenSequence:
    """One training sequence: tokens Start..End plus the bot response texts
    aligned to input positions (responses[i] follows the i-th user request;
    responses[0] is empty because nothing precedes the opening)."""

    tokens: list[IntentToken]
    responses: list[str]

    def __post_init__(self) -> None:
        if len(self.responses) != len(self.tokens) - 1:
            raise ValueError("need one response context per input position")


def sequences_from_corpus(corpus: Corpus) -> list[TokenSequence]:
    return [sequence_from_dialog(d) for d in corpus.dialogs]


def sequence_from_dialog(dialog: Dialog) -> TokenSequence:
    tokens = tokenize_dialog(dialog)
    bot_after: list[str] = []
    current = ""
    pending_user = False
    for turn in dialog.turns:
        if turn.speaker == "user":
            if pending_user:
                bot_after.append(current)
            pending_user = True
            current = ""
        else:
            current = turn.text
    if pending_user:
        bot_after.append(current)
    # bot_after[i] is the response following user turn i (0-based). Input
    # position 0 is Start with no context; position i>=1 is user turn i.
    responses = [""] + bot_after[: len(tokens) - 2]
    while len(responses) < len(tokens) - 1:
        responses.append("")
    return TokenSequence(tokens, responses)


class BigramModel:
    """Additively smoothed bigram over intent tokens."""

    def __init__(self, vocab: IntentVocab, counts: np.ndarray, smoothing: float) -> None:
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.vocab = vocab
        self.counts = np.asarray(counts, dtype=np.float64)
        self.smoothing = smoothing

    @classmethod
    def train(cls, sequences: list[TokenSequence], vocab: IntentVocab, smoothing: float = 0.0) -> "BigramModel":
        if not sequences:
            raise ValueError("empty training set")
        counts = np.zeros((vocab.size, vocab.size))
        for seq in sequences:
            idxs = [vocab.idx(t) for t in seq.tokens]
            for prev, nxt in zip(idxs, idxs[1:]):
                counts[prev, nxt] += 1.0
        return cls(vocab, counts, smoothing)

    def row_dist(self, prev_index: int) -> np.ndarray:
        row = self.counts[prev_index]
        total = row.sum()
        if self.smoothing == 0.0:
            if total == 0.0:
                return np.zeros_like(row)
            return row / total
        v = self.vocab.size
        return (row + self.smoothing) / (total + self.smoothing * v)

    def next_dist(self, history: list[IntentToken], responses: list[str] | None = None) -> np.ndarray:
        return self.row_dist(self.vocab.idx(history[-1]))

    def sequence_nll(self, seq: TokenSequence) -> tuple[float, int]:
        idxs = [self.vocab.idx(t) for t in seq.tokens]
        nll = 0.0
        for prev, nxt in zip(idxs, idxs[1:]):
            p = self.row_dist(prev)[nxt]
            if p <= 0.0:
                return math.inf, len(idxs) - 1
            nll -= math.log(p)
        return nll, len(idxs) - 1

    def save(self, path: str) -> None:
        params = nn.ParamSet()
        params.add("bigram.counts", self.counts)
        meta = {
            "model": "bigram",
            "smoothing": self.smoothing,
            "vocab": [t.canonical() for t in self.vocab.tokens],
        }
        nn.save_params(path, params, meta)

    @classmethod
    def load(cls, path: str) -> "BigramModel":
        arrays, meta = nn.load_params(path)
        if meta.get("model") != "bigram":
            raise ValueError(f"{path} is not a bigram checkpoint")
        vocab = IntentVocab(tuple(IntentToken.parse(n) for n in meta["vocab"]))
        return cls(vocab, arrays["bigram.counts"], meta["smoothing"])


def hash_words(text: str, buckets: int) -> list[int]:
    return [zlib.crc32(w.encode("utf-8")) % buckets for w in text.split()]


@dataclass
class LmHyper:
    cell: str = "rnn"  # "rnn" | "gru"
    hidden: int = 30
    embed: int = 50
    epochs: int = 100
    lr: float = 0.001
    condition_response: bool = False
    hash_buckets: int = 256
    response_dim: int = 16
    clip_norm: float = 5.0
    seed: int = 0


class RnnLm:
    """Recurrent intent LM: embedding -> RNN/GRU cell -> affine -> softmax."""

    def __init__(self, vocab: IntentVocab, hyper: LmHyper) -> None:
        if hyper.cell not in ("rnn", "gru"):
            raise ValueError(f"unknown cell kind {hyper.cell!r}")
        self.vocab = vocab
        self.hyper = hyper
        self.params = nn.ParamSet()
        rng = np.random.default_rng(hyper.seed)
        self.embedding = nn.Embedding(self.params, "lm.embed", vocab.size, hyper.embed, rng)
        cell_in = hyper.embed + (hyper.response_dim if hyper.condition_response else 0)
        cell_cls = nn.RnnCell if hyper.cell == "rnn" else nn.GruCell
        self.cell = cell_cls(self.params, "lm.cell", cell_in, hyper.hidden, rng)
        self.head = nn.Affine(self.params, "lm.head", hyper.hidden, vocab.size, rng)
        if hyper.condition_response:
            self.response_embed = nn.Embedding(
                self.params, "lm.resp", hyper.hash_buckets, hyper.response_dim, rng
            )
        else:
            self.response_embed = None

    def _context_vector(self, text: str) -> tuple[np.ndarray, list[int]]:
        assert self.response_embed is not None
        idxs = hash_words(text, self.hyper.hash_buckets)
        if not idxs:
            return np.zeros(self.hyper.response_dim), []
        return self.response_embed.table.value[idxs].mean(axis=0), idxs

    def forward_sequence(self, seq: TokenSequence) -> tuple[float, int, list]:
        """Teacher-forced NLL over one sequence; returns (nll_sum, n, caches)."""
        idxs = [self.vocab.idx(t) for t in seq.tokens]
        h = np.zeros((1, self.hyper.hidden))
        nll = 0.0
        caches = []
        for pos in range(len(idxs) - 1):
            x_emb, emb_cache = self.embedding.forward(np.array([idxs[pos]]))
            ctx_idxs: list[int] = []
            if self.response_embed is not None:
                ctx, ctx_idxs = self._context_vector(seq.responses[pos])
                x = np.concatenate([x_emb, ctx.reshape(1, -1)], axis=1)
            else:
                x = x_emb
            h, cell_cache = self.cell.forward(x, h)
            logits, head_cache = self.head.forward(h)
            loss, dlogits = nn.softmax_xent(logits, idxs[pos + 1])
            nll += loss
            caches.append((emb_cache, ctx_idxs, cell_cache, head_cache, dlogits))
        return nll, len(idxs) - 1, caches

    def backward_sequence(self, caches: list) -> None:
        dh_next = np.zeros((1, self.hyper.hidden))
        for emb_cache, ctx_idxs, cell_cache, head_cache, dlogits in reversed(caches):
            dh = self.head.backward(dlogits, head_cache) + dh_next
            dx, dh_next = self.cell.backward(dh, cell_cache)
            if self.response_embed is not None:
                d_emb = dx[:, : self.hyper.embed]
                d_ctx = dx[:, self.hyper.embed :]
                if ctx_idxs:
                    per_word = d_ctx.reshape(-1) / len(ctx_idxs)
                    np.add.at(self.response_embed.table.grad, ctx_idxs, per_word)
            else:
                d_emb = dx
            self.embedding.backward(d_emb, emb_cache)

    def next_dist(self, history: list[IntentToken], responses: list[str] | None = None) -> np.ndarray:
        """Distribution over the next token given the full history."""
        if responses is None:
            responses = [""] * len(history)
        h = np.zeros((1, self.hyper.hidden))
        logits = None
        for pos, token in enumerate(history):
            x_emb, _ = self.embedding.forward(np.array([self.vocab.idx(token)]))
            if self.response_embed is not None:
                ctx, _ = self._context_vector(responses[pos] if pos < len(responses) else "")
                x = np.concatenate([x_emb, ctx.reshape(1, -1)], axis=1)
            else:
                x = x_emb
            h, _ = self.cell.forward(x, h)
            logits, _ = self.head.forward(h)
        assert logits is not None, "history must be non-empty"
        return nn.softmax(logits.reshape(-1))

    def sequence_nll(self, seq: TokenSequence) -> tuple[float, int]:
        nll, n, _ = self.forward_sequence(seq)
        return nll, n

    def save(self, path: str) -> None:
        meta = {
            "model": "rnnlm",
            "vocab": [t.canonical() for t in self.vocab.tokens],
            "hyper": vars(self.hyper),
        }
        nn.save_params(path, self.params, meta)

    @classmethod
    def load(cls, path: str) -> "RnnLm":
        arrays, meta = nn.load_params(path)
        if meta.get("model") != "rnnlm":
            raise ValueError(f"{path} is not a recurrent LM checkpoint")
        vocab = IntentVocab(tuple(IntentToken.parse(n) for n in meta["vocab"]))
        model = cls(vocab, LmHyper(**meta["hyper"]))
        for p in model.params:
            p.value[...] = arrays[p.name]
        return model


def train_rnn_lm(
    train: list[TokenSequence],
    dev: list[TokenSequence],
    vocab: IntentVocab,
    hyper: LmHyper,
    log_every: int = 0,
) -> RnnLm:
    """Sequence-level SGD with teacher forcing; returns the parameters from
    the epoch with the best dev perplexity."""
    if not train:
        raise ValueError("empty training set")
    model = RnnLm(vocab, hyper)
    optimizer = nn.Adam(hyper.lr)
    rng = np.random.default_rng(hyper.seed + 1)
    best_ppl = math.inf
    best_state = model.params.state()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train))
        for seq_index in order:
            seq = train[int(seq_index)]
            nll, n, caches = model.forward_sequence(seq)
            if not math.isfinite(nll):
                raise nn.TrainingError(f"non-finite loss at epoch {epoch}, sequence {seq_index}")
            model.backward_sequence(caches)
            nn.clip_grad_norm(model.params, hyper.clip_norm)
            optimizer.step(model.params)
        dev_ppl = perplexity(model, dev if dev else train)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: dev perplexity {dev_ppl:.4f}")
        if dev_ppl < best_ppl:
            best_ppl = dev_ppl
            best_state = model.params.state()
    model.params.load_state(best_state)
    return model


def train_bigram(
    sequences: list[TokenSequence], vocab: IntentVocab, smoothing: float = 0.0
) -> BigramModel:
    return BigramModel.train(sequences, vocab, smoothing)


def perplexity(model, sequences: list[TokenSequence]) -> float:
    """exp of the mean per-token NLL; +inf on any zero-probability event."""
    total_nll = 0.0
    total_tokens = 0
    for seq in sequences:
        nll, n = model.sequence_nll(seq)
        total_nll += nll
        total_tokens += n
    if total_tokens == 0:
        raise ValueError("no prediction targets in the evaluation set")
    if not math.isfinite(total_nll):
        return math.inf
    return math.exp(total_nll / total_tokens)


def sample_next(
    model,
    history: list[IntentToken],
    responses: list[str] | None,
    rng: np.random.Generator,
) -> IntentToken:
    """Draw the next token from the model's conditional; never returns Start."""
    vocab: IntentVocab = model.vocab
    dist = np.array(model.next_dist(history, responses), dtype=np.float64)
    dist[vocab.start_index] = 0.0
    total = dist.sum()
    if total <= 0.0:
        raise ValueError("model assigns zero probability to every continuation")
    dist /= total
    return vocab.token(int(rng.choice(vocab.size, p=dist)))


def load_model(path: str):
    """Load either LM flavor by inspecting the checkpoint header."""
    _, meta = nn.load_params(path)
    kind = meta.get("model")
    if kind == "bigram":
        return BigramModel.load(path)
    if kind == "rnnlm":
        return RnnLm.load(path)
    raise ValueError(f"unknown model kind {kind!r} in {path}")
