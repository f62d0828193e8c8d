import numpy as np
import pytest

from rmvp.domain import MultipatchDomain, box_domain, build_cylinder_in_box

MODEL_GEOMETRY = dict(r_cyl=0.012, h_cyl=0.06, r_interface=0.0205, box_half_width=0.038)


def two_box(divisions=(1, 1, 1), sigma=0.0, labels=("conductor", "ext")):
    """Unit cube split at x = 1/2 into an interior and an exterior patch.

    The lateral faces are declared symmetry planes so that the flat interface counts as closed.
    """
    base = box_domain([(0.0, 1.0)] * 3, splits=2, divisions=divisions)
    return MultipatchDomain(base.patches, list(labels), [tuple(divisions)] * 2,
                            sigma={"conductor": sigma, "air_int": 0.0, "ext": 0.0},
                            symmetry_planes=((1, 0.0), (1, 1.0), (2, 0.0), (2, 1.0)))


@pytest.fixture(scope="session")
def octant_domain():
    return build_cylinder_in_box(**MODEL_GEOMETRY, sigma=35e6, symmetry="octant",
                                 divisions={"axial": [3, 1, 1]})


@pytest.fixture(scope="session")
def coarse_octant():
    return build_cylinder_in_box(**MODEL_GEOMETRY, sigma=35e6, symmetry="octant")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
