import numpy as np
import pytest

from consensuscal.imaging import Image, ImageStack


def random_stack(rng: np.random.Generator, n: int, h: int, w: int, c: int = 3) -> ImageStack:
    return ImageStack.from_array(rng.random((n, h, w, c)))


def constant_image(value: float, h: int = 4, w: int = 4, c: int = 3) -> Image:
    return Image(np.full((h, w, c), value))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rgb_pair(rng):
    return Image(rng.random((16, 16, 3))), Image(rng.random((16, 16, 3)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
