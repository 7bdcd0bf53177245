import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from magpo_lab import tabular  # noqa: E402


def _flipped_pmd(game, learner, eta, ordering=None):
    # mutation: tilt away from high Q instead of towards it
    ordering = tabular._natural_ordering(learner.num_agents, ordering)
    Q = tabular.policy_eval(game, learner).Q
    return tabular.guider_from_log_joint(tabular._log(learner.joint()) - eta * Q, ordering)


@pytest.fixture
def sign_flipped_pmd(monkeypatch):
    monkeypatch.setattr(tabular, "pmd_guider_update", _flipped_pmd)
    return _flipped_pmd


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed again in the terminal summary."""
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
