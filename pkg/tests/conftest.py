import pathlib

import numpy as np
import pytest

from lissense.channel import LisSpec, Reflector, Scene

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO_ROOT / "scenarios"


@pytest.fixture(scope="session")
def small_scene() -> Scene:
    """Compact room with one interior panel; fast to evaluate everywhere."""
    return Scene(
        room=(10.0, 8.0, 4.0),
        lis=LisSpec(anchor=(4.0, 0.0, 1.0), rows=8, cols=8, spacing=0.0428, axis="y"),
        carrier_hz=3.5e9,
        tx_power_w=0.1,
        max_paths=10,
        reflectors=(
            Reflector(axis="x", center=(1.0, 4.0, 1.5), size=(3.0, 2.0), gamma=0.7),
        ),
    )


@pytest.fixture(scope="session")
def bare_scene() -> Scene:
    """Line-of-sight only: no reflectors at all."""
    return Scene(
        room=(60.0, 60.0, 6.0),
        lis=LisSpec(anchor=(30.0, 0.0, 1.0), rows=2, cols=2, spacing=0.0428, axis="y"),
        carrier_hz=3.5e9,
        tx_power_w=0.1,
    )


def rician_power_samples(g: float, noise_var: float, n: int, seed: int) -> np.ndarray:
    """Direct |sqrt(g) + CN(0, noise_var)|^2 draws, independent of the package."""
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(noise_var / 2)
    return np.abs(np.sqrt(g) + noise) ** 2
