import json
import os

import numpy as np
import pytest

from claribot import corpus as corpus_mod
from claribot import lm
from claribot.core import CorpusFormatError, IntentToken, tokenize_dialog
from claribot.corpus import (
    ConfigurationError,
    GeneratorSpec,
    IntentVocab,
    Lexicon,
    TemplateBank,
    build_vocab,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    split,
)
from claribot.domain import default_domain


TABLE_DIALOG_LINE = json.dumps(
    [
        {"speaker": "user", "text": "a science fiction movie",
         "intent": "GetGenreMoviesIntent",
         "slots": [{"type": "genre", "value": "science fiction"}]},
        {"speaker": "bot", "text": "how about arrival"},
        {"speaker": "user", "text": "who else is in it", "intent": "GetNextActorIntent", "slots": []},
        {"speaker": "bot", "text": "jeremy renner"},
        {"speaker": "user", "text": "is it any good", "intent": "GetRatingIntent", "slots": []},
        {"speaker": "bot", "text": "rated 8.4"},
        {"speaker": "user", "text": "thank you", "intent": "AMAZON.StopIntent", "slots": []},
        {"speaker": "bot", "text": "goodbye"},
    ]
)


class TestLoadCorpus:
    def test_reference_dialog_loads(self, tmp_path):
        path = os.path.join(tmp_path, "c.jsonl")
        with open(path, "w") as fh:
            fh.write(TABLE_DIALOG_LINE + "\n")
        corpus = load_corpus(path)
        assert corpus.n_dialogs == 1
        assert corpus.n_user_turns == 4

    def test_empty_file(self, tmp_path):
        path = os.path.join(tmp_path, "empty.jsonl")
        open(path, "w").close()
        assert load_corpus(path).n_dialogs == 0

    def test_unknown_slot_type_named_in_error(self, tmp_path):
        line = json.dumps(
            [{"speaker": "user", "text": "x", "intent": "GetGenreMoviesIntent",
              "slots": [{"type": "spaceship", "value": "y"}]}]
        )
        path = os.path.join(tmp_path, "bad.jsonl")
        with open(path, "w") as fh:
            fh.write(line + "\n")
        with pytest.raises(CorpusFormatError, match="spaceship"):
            load_corpus(path, known_slot_types=("genre",))

    def test_unknown_intent_rejected(self, tmp_path):
        line = json.dumps([{"speaker": "user", "text": "x", "intent": "FlyToMarsIntent", "slots": []}])
        path = os.path.join(tmp_path, "bad.jsonl")
        with open(path, "w") as fh:
            fh.write(line + "\n")
        with pytest.raises(CorpusFormatError, match="line 1"):
            load_corpus(path, known_intents=("GetRatingIntent",))

    def test_malformed_json_reports_line(self, tmp_path):
        path = os.path.join(tmp_path, "bad.jsonl")
        with open(path, "w") as fh:
            fh.write(TABLE_DIALOG_LINE + "\n")
            fh.write("{oops\n")
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(path)

    def test_save_load_round_trip_is_byte_identical(self, small_corpus, tmp_path):
        first = os.path.join(tmp_path, "a.jsonl")
        second = os.path.join(tmp_path, "b.jsonl")
        save_corpus(small_corpus, first)
        save_corpus(load_corpus(first), second)
        with open(first, "rb") as fa, open(second, "rb") as fb:
            assert fa.read() == fb.read()


class TestGenerator:
    def test_requested_count(self, movie_domain):
        corpus = generate_synthetic_corpus(movie_domain, 25, seed=3)
        assert corpus.n_dialogs == 25

    def test_same_seed_byte_identical(self, movie_domain, tmp_path):
        a = os.path.join(tmp_path, "a.jsonl")
        b = os.path.join(tmp_path, "b.jsonl")
        save_corpus(generate_synthetic_corpus(movie_domain, 40, seed=11), a)
        save_corpus(generate_synthetic_corpus(movie_domain, 40, seed=11), b)
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_context_rules_never_violated(self, movie_domain):
        # Scan-and-count oracle: every adjacent token pair must be allowed by
        # the longest matching context rule at that point.
        corpus = generate_synthetic_corpus(movie_domain, 400, seed=5)
        spec = movie_domain.generator
        violations = 0
        for dialog in corpus.dialogs:
            tokens = tokenize_dialog(dialog)
            for i in range(1, len(tokens)):
                history = tokens[:i]
                n_intents = len(history) - 1
                if n_intents >= spec.max_turns:
                    continue  # forced End
                allowed = set(spec.successor_weights(history))
                if n_intents < spec.min_turns:
                    allowed.discard("End")
                name = "End" if i == len(tokens) - 1 else tokens[i].canonical()
                if name not in allowed:
                    violations += 1
        assert violations == 0

    def test_every_dialog_ends_with_stop_turn(self, movie_domain):
        corpus = generate_synthetic_corpus(movie_domain, 30, seed=9)
        for dialog in corpus.dialogs:
            tokens = tokenize_dialog(dialog)
            assert tokens[0].canonical() == "Start"
            assert tokens[-1].canonical() == "End"

    def test_unreachable_end_rejected(self):
        a = IntentToken.intent("A")
        spec = GeneratorSpec(
            tokens=(a,),
            rules={("Start",): {"A": 1.0}, ("A",): {"A": 1.0}},
        )
        with pytest.raises(ConfigurationError, match="End unreachable"):
            spec.validate()

    def test_unreachable_intent_rejected(self):
        a, b = IntentToken.intent("A"), IntentToken.intent("B")
        spec = GeneratorSpec(
            tokens=(a, b),
            rules={("Start",): {"A": 1.0}, ("A",): {"End": 1.0}, ("B",): {"End": 1.0}},
        )
        with pytest.raises(ConfigurationError, match="unreachable from Start"):
            spec.validate()


class TestSplit:
    def test_80_10_10(self, movie_domain):
        corpus = generate_synthetic_corpus(movie_domain, 100, seed=1)
        train, dev, test = split(corpus, (0.8, 0.1, 0.1), seed=0)
        assert (train.n_dialogs, dev.n_dialogs, test.n_dialogs) == (80, 10, 10)

    def test_all_train_with_relaxed_guards(self, movie_domain):
        corpus = generate_synthetic_corpus(movie_domain, 10, seed=1)
        train, dev, test = split(corpus, (1.0, 0.0, 0.0), seed=0, allow_empty=True)
        assert (train.n_dialogs, dev.n_dialogs, test.n_dialogs) == (10, 0, 0)

    def test_same_seed_same_membership(self, small_corpus):
        def membership():
            train, dev, test = split(small_corpus, (0.8, 0.1, 0.1), seed=42)
            return [id(d) for d in train.dialogs + dev.dialogs + test.dialogs]

        assert membership() == membership()

    def test_is_a_partition(self, small_corpus):
        train, dev, test = split(small_corpus, (0.8, 0.1, 0.1), seed=4)
        ids = [id(d) for part in (train, dev, test) for d in part.dialogs]
        assert len(ids) == small_corpus.n_dialogs
        assert len(set(ids)) == len(ids)
        assert set(ids) == {id(d) for d in small_corpus.dialogs}

    def test_too_small_corpus_rejected(self, movie_domain):
        corpus = generate_synthetic_corpus(movie_domain, 2, seed=1)
        with pytest.raises(ValueError):
            split(corpus, (0.8, 0.1, 0.1), seed=0)

    def test_bad_ratios_rejected(self, small_corpus):
        with pytest.raises(ValueError):
            split(small_corpus, (0.5, 0.4, 0.2), seed=0)


class TestVocab:
    def test_table_dialog_vocab_has_five_tokens(self, tmp_path):
        path = os.path.join(tmp_path, "c.jsonl")
        with open(path, "w") as fh:
            fh.write(TABLE_DIALOG_LINE + "\n")
        vocab = build_vocab(load_corpus(path))
        assert vocab.size == 5
        assert vocab.tokens[0].canonical() == "Start"
        assert vocab.tokens[1].canonical() == "End"

    def test_repeated_intents_do_not_grow_vocab(self, tmp_path):
        path = os.path.join(tmp_path, "c.jsonl")
        with open(path, "w") as fh:
            fh.write(TABLE_DIALOG_LINE + "\n")
            fh.write(TABLE_DIALOG_LINE + "\n")
        assert build_vocab(load_corpus(path)).size == 5

    def test_vocab_of_union_is_union_of_vocabs(self, movie_domain):
        a = generate_synthetic_corpus(movie_domain, 30, seed=1)
        b = generate_synthetic_corpus(movie_domain, 30, seed=2)
        union = corpus_mod.Corpus(a.dialogs + b.dialogs)
        tokens = lambda v: {t.canonical() for t in v.tokens}
        assert tokens(build_vocab(union)) == tokens(build_vocab(a)) | tokens(build_vocab(b))

    def test_index_map_is_a_bijection(self, vocab):
        assert sorted(vocab.index.values()) == list(range(vocab.size))
        for token in vocab.tokens:
            assert vocab.token(vocab.idx(token)) == token

    def test_body_sorted_by_canonical_string(self, vocab):
        body = [t.canonical() for t in vocab.tokens[2:]]
        assert body == sorted(body)


class TestTemplateBankAndLexicon:
    def test_placeholder_mismatch_rejected(self):
        bank = TemplateBank({"X+genre": ("find a {movie_title} film",)})
        with pytest.raises(ConfigurationError):
            bank.validate([IntentToken.intent("X", ("genre",))])

    def test_missing_template_rejected(self):
        bank = TemplateBank({})
        with pytest.raises(ConfigurationError):
            bank.for_token(IntentToken.intent("X"))

    def test_lexicon_duplicate_values_rejected(self):
        with pytest.raises(ConfigurationError):
            Lexicon({"genre": ("action", "action")})

    def test_bank_and_lexicon_round_trip(self, movie_domain, tmp_path):
        bank_path = os.path.join(tmp_path, "templates.json")
        lex_path = os.path.join(tmp_path, "lexicon.json")
        movie_domain.templates.save(bank_path)
        movie_domain.lexicon.save(lex_path)
        assert TemplateBank.load(bank_path).patterns == movie_domain.templates.patterns
        assert Lexicon.load(lex_path).values == movie_domain.lexicon.values


class TestDefaultDomain:
    def test_validates(self):
        domain = default_domain()
        domain.generator.validate()
        domain.templates.validate(domain.generator.tokens)

    def test_masked_template_bags_are_unique_per_intent(self, movie_domain):
        # Distinct intents must stay separable under bag-of-words with slot
        # values masked, otherwise the clean channel could not reach full
        # recognition fidelity.
        import re

        seen: dict[frozenset, str] = {}
        for key, patterns in movie_domain.templates.patterns.items():
            for pattern in patterns:
                masked = re.sub(r"\{(\w+)\}", r"<\1>", pattern)
                bag = frozenset(masked.split())
                assert bag not in seen or seen[bag] == key, (
                    f"bag collision between {seen[bag]} and {key}: {bag}"
                )
                seen[bag] = key
