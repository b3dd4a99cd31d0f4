import pytest
from hypothesis import HealthCheck, settings

import formlab as fl

settings.register_profile(
    "ci", derandomize=True, max_examples=50, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

CATALOG_IDS = ("diag-5.7", "divform-b", "frac-a10", "lap1d-dirac", "lap2d",
               "perturbed-g")


@pytest.fixture(scope="session")
def catalog_problems():
    return {pid: fl.build_catalog_problem(pid) for pid in CATALOG_IDS}


@pytest.fixture(scope="session")
def catalog_gs(catalog_problems):
    """Tight Gauss-Seidel solutions, shared across test modules."""
    return {pid: fl.solve_elliptic_gauss_seidel(p.form, p.driver, p.mu,
                                                tol=1e-12)
            for pid, p in catalog_problems.items()}
