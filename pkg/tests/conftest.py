from contextlib import contextmanager

import pytest

from vidcap.fixtures import build_corpus, load_corpus_meta

ACCEPTANCE_CORPUS_SIZE = 54
ACCEPTANCE_SEED = 0


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory):
    """The >= 50 video synthetic corpus shared by the acceptance criteria."""
    directory = tmp_path_factory.mktemp("acceptance_corpus")
    build_corpus(directory, count=ACCEPTANCE_CORPUS_SIZE, seed=ACCEPTANCE_SEED)
    return directory, load_corpus_meta(directory)


@contextmanager
def criterion(name: str):
    """Prints one pass/fail line per acceptance criterion."""
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")
