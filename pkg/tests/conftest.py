"""Shared fixtures: small random models and deterministic rngs."""

import numpy as np
import pytest

from tintsim.aux_reference import AuxConfig, random_model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_model(d=8, h=4, l=2, t=8, vocab=12, seed=0, **kw):
    cfg = AuxConfig(d_aux=d, h_aux=h, l=l, t_aux=t, vocab=vocab, **kw).validate()
    return random_model(cfg, seed)


@pytest.fixture
def tiny_model():
    return make_model()


# Acceptance tests register one line per criterion here; the terminal summary
# echoes them so every pytest run ends with an explicit PASS/FAIL per
# criterion, whatever the verbosity.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
