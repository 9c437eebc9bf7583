import json
import pathlib

import numpy as np
import pytest

from stymam.imageio import write_ppm

FIXTURE_DIR = pathlib.Path(__file__).parent / "fixtures"

# One line per acceptance criterion, printed after the run so the verdicts
# survive pytest's output capture.
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if not acceptance_lines:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in acceptance_lines:
        terminalreporter.write_line(line)


def load_scan_fixture():
    with open(FIXTURE_DIR / "strip_zigzag_4x4_s2.json") as f:
        return json.load(f)


def write_noise_ppm(path, rng, size=32):
    write_ppm(path, rng.integers(0, 256, (size, size, 3)).astype(np.uint8))


def write_gradient_ppm(path, size=32, offset=0.0):
    # Smooth ramps so the "style" images look nothing like the noise content.
    col = np.linspace(0.0, 255.0, size)
    gx, gy = np.meshgrid(col, col)
    img = np.stack([gx, gy, np.full((size, size), offset)], axis=-1)
    write_ppm(path, np.clip(np.rint(img), 0, 255).astype(np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def image_dirs(tmp_path):
    """Four noise content images and four gradient style images, 32x32."""
    content = tmp_path / "content"
    style = tmp_path / "style"
    content.mkdir()
    style.mkdir()
    src = np.random.default_rng(42)
    for i in range(4):
        write_noise_ppm(content / f"c{i}.ppm", src)
    for i in range(4):
        write_gradient_ppm(style / f"s{i}.ppm", offset=60.0 * i)
    return content, style
