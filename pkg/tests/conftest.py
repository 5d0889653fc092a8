import numpy as np
import pytest

from pilotdec.lattice import EmissionLattice, Vocab, gen_corpus


def random_lattice(rng: np.random.Generator, T: int, V: int, alpha: float = 1.0) -> EmissionLattice:
    return EmissionLattice.from_probs(rng.dirichlet(np.full(V, alpha), size=T))


@pytest.fixture
def vocab():
    return Vocab.default()


@pytest.fixture
def small_vocab():
    return Vocab.default(n_words=4)


@pytest.fixture(scope="session")
def corpus_small():
    vocab = Vocab.default()
    return gen_corpus(12, [(0.1, 0.5), (0.7, 0.5)], seed=11, vocab=vocab), vocab


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
