import subprocess
from pathlib import Path

import pytest

TOY_CONFIG = """\
rings=1
grid_n=256
grid_pitch=2e-05
intensity_crop=64
phase_crop=192
out_size=64
"""


@pytest.fixture(scope="session")
def toy_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "toy.cfg"
    path.write_text(TOY_CONFIG)
    return path


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory, toy_config_file):
    """12-pair toy dataset produced through the primary's CLI."""
    out = tmp_path_factory.mktemp("toy-ds")
    subprocess.run(
        ["cbcsim", "generate", "--config", str(toy_config_file),
         "--count", "12", "--seed", "2718", "--out", str(out)],
        check=True, capture_output=True, text=True)
    return Path(out)


@pytest.fixture(scope="session")
def forward_model(tmp_path_factory, toy_dataset):
    """Smoke-scale forward model trained for one epoch on the 12 pairs."""
    out = tmp_path_factory.mktemp("models") / "forward.pt"
    result = subprocess.run(
        ["neural", "train", "--dataset", str(toy_dataset),
         "--direction", "forward", "--out", str(out),
         "--base-channels", "16", "--seed", "1", "--quiet"],
        check=True, capture_output=True, text=True)
    return out, result.stdout
