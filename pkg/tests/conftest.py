import pytest
from hypothesis import settings

from ics16 import channel

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _lemma_n_guard():
    # every simulated session, inner boosting sessions included, rechecks Lemma N
    before = channel.LEMMA_N_TALLY["violations"]
    yield
    assert channel.LEMMA_N_TALLY["violations"] == before, "Lemma N violated in a session run by this test"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
    tally = channel.LEMMA_N_TALLY
    terminalreporter.write_line(
        f"Lemma N: {tally['sessions']} sessions checked, {tally['violations']} violations"
    )


@pytest.fixture
def verdict(request):
    """Print and record one PASS/FAIL line, then fail the test if the criterion failed."""
    log = request.config.__dict__.setdefault("_acceptance_lines", [])

    def _verdict(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        log.append(line)
        assert ok, line

    return _verdict
