import math

import numpy as np
import pytest


def star_polygon(rng, n_vertices, cx=0.0, cy=0.0, r_lo=2.0, r_hi=20.0, fill=0.7, quantum=None):
    """Star-shaped polygon about ``(cx, cy)`` with at most one vertex per sector.

    Each chosen sector gets one vertex at an angle kept away from the sector
    edges. With ``quantum`` the offsets are rounded to multiples of it, which
    keeps exact scaling by powers of two and by 10 representable.
    """
    span = 2 * math.pi / n_vertices
    chosen = np.flatnonzero(rng.random(n_vertices) < fill)
    if len(chosen) < 3:
        chosen = np.sort(rng.choice(n_vertices, 3, replace=False))
    pts = []
    for k in chosen:
        theta = (k + rng.uniform(0.3, 0.7)) * span
        r = rng.uniform(r_lo, r_hi)
        dx, dy = r * math.cos(theta), r * math.sin(theta)
        if quantum:
            dx, dy = round(dx / quantum) * quantum, round(dy / quantum) * quantum
        pts.append((cx + dx, cy + dy))
    return np.array(pts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, ok, detail):
        status = "PASS" if ok is True else ("FAIL" if ok is False else ok)
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
