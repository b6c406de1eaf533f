import subprocess
import sys

import pytest


def run_simulator(*args) -> None:
    """Drive the simulator through its CLI: the only coupling is file formats."""
    cmd = [sys.executable, "-m", "scatterfield.cli", *map(str, args)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{' '.join(cmd)} failed:\n{proc.stdout}\n{proc.stderr}")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """6 desk-preset pairs with noise, 80/20 split."""
    out = tmp_path_factory.mktemp("trainset")
    run_simulator("generate", "--preset", "desk", "--n", "6", "--seed", "13", "--out", out)
    return out
