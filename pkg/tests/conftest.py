"""Pytest configuration and fixtures."""

import pytest

from fastdiff.config import build_settings
from fastdiff.core.grid import build_grid
from fastdiff.core.lab import Laboratory
from fastdiff.core.operator import assemble, eigen
from fastdiff.core.stationary import solve_stationary


@pytest.fixture(scope="session")
def settings():
    """Coarse interval settings, p = 2."""
    return build_settings(
        n=101,
        k_max=20,
        dt=1.0 / 64.0,
        window_j=5,
        window_i=5,
        invariance_points=3,
        random_pairs=4,
        lipschitz_pairs=2,
        horizon=2.0,
        shadow_horizon=4.0,
    )


@pytest.fixture(scope="session")
def lab(settings):
    """Laboratory shared by the whole session; its stages are cached."""
    return Laboratory(settings)


@pytest.fixture(scope="session")
def grid(lab):
    return lab.grid


@pytest.fixture(scope="session")
def state(lab):
    return lab.state


@pytest.fixture(scope="session")
def assembly(lab):
    return lab.assembly


@pytest.fixture(scope="session")
def decomp(lab):
    return lab.decomp


@pytest.fixture(scope="session")
def gap(lab):
    return lab.gap


@pytest.fixture(scope="session")
def semiflow(lab):
    return lab.semiflow


@pytest.fixture(scope="session")
def manifolds(lab):
    return lab.manifolds


@pytest.fixture(scope="session")
def ball_state():
    """Lane-Emden state on the unit ball in dimension 3, p = 2."""
    return solve_stationary(2.0, build_grid("radial-ball", 3, 101))


@pytest.fixture(scope="session")
def ball_decomp(ball_state):
    return eigen(assemble(ball_state), 20)


@pytest.fixture
def config_file(tmp_path):
    """Write a coarse TOML run configuration and return its path."""

    def write(**extra):
        sections = {
            "domain": {"n": 101},
            "spectrum": {"k_max": 20},
            "flow": {"dt": 0.015625, "horizon": 1.0},
            "fixed_point": {"window_j": 5, "window_i": 5},
            "experiments": {
                "invariance_points": 2,
                "random_pairs": 2,
                "lipschitz_pairs": 2,
                "shadow_horizon": 4.0,
            },
            "overrides": extra,
        }
        lines = []
        for section, values in sections.items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                if key in extra and section != "overrides":
                    continue
                lines.append(f"{key} = {_toml_value(value)}")
        path = tmp_path / "run.toml"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write


def _toml_value(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, str):
        return f'"{value}"'
    return repr(value)
