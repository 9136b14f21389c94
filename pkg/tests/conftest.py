import contextlib

import pytest

VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """``with criterion(n, title) as info:`` records one PASS/FAIL line; ``info`` collects details."""

    @contextlib.contextmanager
    def run(number, title):
        info: dict = {}
        try:
            yield info
        except BaseException as err:
            line = f"FAIL  criterion {number}: {title}  [{_fmt(info)}] {type(err).__name__}: {err}".rstrip()
            VERDICTS.append(line.splitlines()[0])
            print(VERDICTS[-1])
            raise
        VERDICTS.append(f"PASS  criterion {number}: {title}  [{_fmt(info)}]")
        print(VERDICTS[-1])

    return run


def _fmt(info):
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
