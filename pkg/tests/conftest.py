import numpy as np
import pytest
from hypothesis import settings

from varigrad.geometry import ShapeGraph, closed_polyline, polyline

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_curve(rng: np.random.Generator, n: int, closed: bool | None = None) -> ShapeGraph:
    pts = np.cumsum(0.15 * rng.standard_normal((n, 3)), axis=0)
    if closed is None:
        closed = bool(rng.random() < 0.5)
    return closed_polyline(pts) if closed else polyline(pts)


def star_graph(rng: np.random.Generator, arms: int = 3, per_arm: int = 5) -> ShapeGraph:
    """Shape graph with one junction vertex and ``arms`` open branches."""
    verts = [np.zeros(3)]
    edges = []
    for _ in range(arms):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        prev = 0
        for s in range(1, per_arm + 1):
            verts.append(s * 0.2 * d + 0.02 * rng.standard_normal(3))
            edges.append((prev, len(verts) - 1))
            prev = len(verts) - 1
    return ShapeGraph(np.array(verts), np.array(edges))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


UNIT_SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)


ACCEPTANCE: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
