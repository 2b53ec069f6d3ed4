import numpy as np
import pytest

from paracsi.channel import ScenarioConfig


@pytest.fixture
def desk_cfg():
    # the analysis configuration: 16 antennas, 32 subcarriers, 3 paths
    return ScenarioConfig(n_tx=16, n_subcarriers=32, n_paths=3)


@pytest.fixture
def small_cfg():
    return ScenarioConfig(n_tx=4, n_subcarriers=8, n_paths=2, window_len=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results: criterion -> list of (sub-check, ok, detail)
ACCEPTANCE: dict[str, list] = {}


def record(criterion: str, check: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        checks = ACCEPTANCE[crit]
        n_ok = sum(ok for _, ok, _ in checks)
        status = "PASS" if n_ok == len(checks) else "FAIL"
        tr.write_line(f"{crit:>4} {status} ({n_ok}/{len(checks)} sub-checks)")
        for name, ok, detail in checks:
            tr.write_line(f"       {'ok  ' if ok else 'FAIL'} {name}: {detail}")
