import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from occguide.geometry import Annotation, BBox  # noqa: E402


def lattice_box(rng, extent=10.0, step=0.25, max_side=6.0):
    """Random box with corners on a ``step`` lattice inside ``[0, extent]^2``."""
    n = int(extent / step)
    m = int(max_side / step)
    w = int(rng.integers(1, m + 1))
    h = int(rng.integers(1, m + 1))
    x = int(rng.integers(0, n - w + 1))
    y = int(rng.integers(0, n - h + 1))
    return (x * step, y * step, w * step, h * step)


def integer_annotations(rng, n, img_w, img_h, max_side=40, overhang=10):
    anns = []
    for _ in range(n):
        w = int(rng.integers(1, max_side + 1))
        h = int(rng.integers(1, max_side + 1))
        x = int(rng.integers(-overhang, img_w - w + overhang + 1))
        y = int(rng.integers(-overhang, img_h - h + overhang + 1))
        anns.append(Annotation(BBox(x, y, w, h), int(rng.integers(1, 4))))
    return anns


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = []


@pytest.fixture
def criterion(request):
    """Register an acceptance criterion label so the summary prints one line for it."""

    def register(label):
        request.node.user_properties.append(("criterion", label))

    return register


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    labels = [v for k, v in report.user_properties if k == "criterion"]
    if labels:
        _CRITERIA.append((labels[0], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, duration in sorted(_CRITERIA, key=lambda t: int(t[0].split(".")[0])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {label}  ({duration:.2f}s)")
