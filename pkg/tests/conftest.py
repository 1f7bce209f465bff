import pytest

from sglab.synthetic import toy_catalog, write_toy_corpus


@pytest.fixture(scope="session")
def small_catalog():
    return toy_catalog(4, 4, 32, seed=0)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return write_toy_corpus(root, 3, 3, 32, seed=0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
