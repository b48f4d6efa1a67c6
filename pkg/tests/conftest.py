import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from preflect import curves
from preflect.conformal import build_exterior_map, build_interior_map
from preflect.reflect import StableReflection

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def circle():
    return curves.circle(512)


@pytest.fixture(scope="session")
def square():
    return curves.square()


@pytest.fixture(scope="session")
def disk_maps(circle):
    return build_interior_map(circle), build_exterior_map(circle)


@pytest.fixture(scope="session")
def square_maps(square):
    return build_interior_map(square), build_exterior_map(square)


@pytest.fixture(scope="session")
def disk_refl(disk_maps):
    return StableReflection(*disk_maps, 1.5)


@pytest.fixture(scope="session")
def square_refl(square_maps):
    return StableReflection(*square_maps, 1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def disk_collar(disk_refl):
    """Disk collar mesh at k_max 3 with its Lipschitz partition."""
    from preflect.edges import build_mesh, lipschitz_partition

    mesh = build_mesh(disk_refl, 3, 1.25)
    lipschitz_partition(mesh, 0.1)
    return mesh


@pytest.fixture(scope="session")
def square_collar(square_refl):
    from preflect.edges import build_mesh, lipschitz_partition

    mesh = build_mesh(square_refl, 3, 1.25)
    lipschitz_partition(mesh, 0.1)
    return mesh


ACCEPTANCE: dict = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(n: int, ok: bool, detail: str):
        prev = ACCEPTANCE.get(n)
        ok = bool(ok) and (prev is None or prev[0])
        ACCEPTANCE[n] = (ok, detail if prev is None else f"{prev[1]}; {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
