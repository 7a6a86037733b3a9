"""Shared fixtures: bundled scenarios solved once per session."""

from pathlib import Path

import pytest

import chronolab
from chronolab.config import build_scenario, load_config
from chronolab.runner import _build_h, _factorize_state, _solve_state

SCENARIO_DIR = Path(chronolab.__file__).parent / "scenarios"
SCENARIO_NAMES = sorted(p.stem for p in SCENARIO_DIR.glob("*.cfg"))

_cache = {}


def _solved(name):
    if name not in _cache:
        scenario = build_scenario(load_config(SCENARIO_DIR / f"{name}.cfg"))
        h = _build_h(scenario)
        state, _, _ = _solve_state(scenario, h)
        f = _factorize_state(scenario, state)
        _cache[name] = (scenario, h, state, f)
    return _cache[name]


@pytest.fixture(scope="session")
def solved():
    """solved(name) -> (scenario, hamiltonian, eigenstate, factorized)."""
    return _solved


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIO_DIR
