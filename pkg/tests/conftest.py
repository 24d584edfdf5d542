import pytest

from sherpa_lift.field import FitConfig, fit_prior
from sherpa_lift.grid import TetGrid
from sherpa_lift.scene import Ellipsoid, PriorScene, Sphere

from helpers import ELLIPSOID_RADII, SPHERE_R


@pytest.fixture(scope="session")
def sphere_scene():
    return PriorScene(Sphere(radius=SPHERE_R))


@pytest.fixture(scope="session")
def ellipsoid_scene():
    return PriorScene(Ellipsoid(radii=ELLIPSOID_RADII))


@pytest.fixture(scope="session")
def grid16():
    return TetGrid(16)


@pytest.fixture(scope="session")
def fitted_sphere(grid16, sphere_scene):
    """Sphere prior fitted with the desk defaults (shared: the fit takes seconds)."""
    params, report = fit_prior(grid16, sphere_scene, FitConfig())
    params.sdf.setflags(write=False)
    params.offset.setflags(write=False)
    return params, report


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  {detail}".rstrip())
