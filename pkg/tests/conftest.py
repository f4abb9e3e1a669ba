import pytest

from helpers import FixtureModel, fixture_corpus, scripted_client


@pytest.fixture
def corpus():
    return fixture_corpus()


@pytest.fixture
def fixture_model(corpus):
    return FixtureModel(corpus)


@pytest.fixture
def client(fixture_model, tmp_path):
    return scripted_client(fixture_model, tmp_path / "cache")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Records one PASS/FAIL line for an acceptance criterion and asserts it."""

    def check(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
