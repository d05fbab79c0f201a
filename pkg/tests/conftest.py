import pytest

from aedtrace import pausenet, simtrip

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def registry_doc():
    return simtrip.default_registry_doc()


@pytest.fixture(scope="session")
def registry(registry_doc):
    return simtrip.default_registry()


@pytest.fixture(scope="session")
def corpus():
    return simtrip.labelled_corpus(1312, seed=11)


@pytest.fixture(scope="session")
def pipeline(corpus):
    return pausenet.fit_pipeline(corpus, seed=11)


@pytest.fixture(scope="session")
def model(pipeline):
    return pipeline.model
