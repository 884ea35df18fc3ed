import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import numpy as np
import pytest


@pytest.fixture(scope="session")
def episode():
    """One accepted expert episode on the default task."""
    from dynabench import world as W
    from dynabench.expert import ExpertConfig, synthesize_episode

    return synthesize_episode(W.TaskSpec(alpha=0.1), ExpertConfig(), np.random.default_rng(11))


def pytest_terminal_summary(terminalreporter):
    import verdicts

    ran = any("test_acceptance" in r.nodeid for key in ("passed", "failed", "error")
              for r in terminalreporter.stats.get(key, []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdicts.lines():
        terminalreporter.write_line(line)
