import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from logpattern.log_ingest import Label, Log, SystemEvent

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ev(e, *args):
    return SystemEvent(e, tuple(args))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_log():
    return Log(
        "toy",
        (
            ev("CreateFile", r"C:\Windows\374683.ini"),
            ev("ReadFile", r"C:\Windows\374683.ini"),
            ev("CreateFile", r"C:\Users\bob\a.txt"),
            ev("ReadFile", r"C:\Users\bob\a.txt"),
            ev("Connect", "http://evil.ru:80"),
        ),
        Label.MALICIOUS,
    )


def random_log(rng, n_events=None, n_types=6, n_args=10, log_id="r"):
    n = int(rng.integers(0, 25)) if n_events is None else n_events
    events = []
    for _ in range(n):
        k = int(rng.integers(1, 4))
        args = tuple(f"arg{int(rng.integers(0, n_args))}" for _ in range(k))
        events.append(SystemEvent(f"E{int(rng.integers(0, n_types))}", args))
    return Log(log_id, tuple(events), Label.UNLABELED)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
