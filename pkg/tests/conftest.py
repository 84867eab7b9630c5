import numpy as np
import pytest

from claribot import channel, corpus, domain, lm
from claribot.usersim import UserSimulator


@pytest.fixture(scope="session")
def movie_domain():
    return domain.default_domain()


@pytest.fixture(scope="session")
def small_corpus(movie_domain):
    return corpus.generate_synthetic_corpus(movie_domain, 120, seed=7)


@pytest.fixture(scope="session")
def vocab(small_corpus):
    return corpus.build_vocab(small_corpus)


@pytest.fixture(scope="session")
def bigram_model(small_corpus, vocab):
    return lm.train_bigram(lm.sequences_from_corpus(small_corpus), vocab, smoothing=0.1)


@pytest.fixture(scope="session")
def rnn_model(small_corpus, vocab):
    seqs = lm.sequences_from_corpus(small_corpus)
    hyper = lm.LmHyper(cell="rnn", hidden=20, embed=16, epochs=3, seed=0)
    return lm.train_rnn_lm(seqs[:100], seqs[100:], vocab, hyper)


@pytest.fixture(scope="session")
def clean_channel(movie_domain):
    return channel.ChannelConfig.for_domain(movie_domain, sigma=0.0)


@pytest.fixture(scope="session")
def noisy_channel(movie_domain):
    # Roughly the WER-0.30 operating point used by the default experiments.
    return channel.ChannelConfig.for_domain(movie_domain, sigma=2.375)


@pytest.fixture(scope="session")
def nlu_model(movie_domain, noisy_channel):
    return channel.train_nlu(movie_domain, noisy_channel, n_samples=3000, seed=0)


@pytest.fixture(scope="session")
def user_sim(rnn_model, movie_domain):
    return UserSimulator(rnn_model, movie_domain.templates, movie_domain.lexicon)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
