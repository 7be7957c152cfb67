"""Shared fixtures: canonical problem specs and config-file helpers."""

import json
from pathlib import Path

import pytest

from perturbsde import Coefficient, GridSpec, ProblemSpec


def make_driftless(alpha: float, x0: float = 0.0, sigma: float = 1.0,
                   horizon: float = 1.0) -> ProblemSpec:
    return ProblemSpec(x0=x0, alpha=alpha,
                       drift=Coefficient.const(0.0),
                       diffusion=Coefficient.const(sigma),
                       horizon=horizon)


def make_tanh(alpha: float = 0.1, amplitude: float = 0.1,
              horizon: float = 1.0) -> ProblemSpec:
    return ProblemSpec(x0=0.0, alpha=alpha,
                       drift=Coefficient.tanh(amplitude=amplitude, scale=1.0),
                       diffusion=Coefficient.const(1.0),
                       horizon=horizon)


@pytest.fixture
def driftless():
    """Factory for zero-drift constant-diffusion problems."""
    return make_driftless


@pytest.fixture
def tanh_spec() -> ProblemSpec:
    """Bounded smooth drift 0.1 tanh, unit diffusion, alpha = 0.1."""
    return make_tanh()


@pytest.fixture
def grid_1000() -> GridSpec:
    return GridSpec(n_steps=1000, horizon=1.0)


@pytest.fixture(scope="session")
def repo_configs() -> Path:
    """Directory holding the example run configs shipped with the repo."""
    return Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict as JSON and return its path."""

    def _write(config: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(config), encoding="utf-8")
        return path

    return _write
