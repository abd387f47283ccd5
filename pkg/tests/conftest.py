import warnings

import numpy as np
import pytest

from preftrans import CostParams, domain_bounds


@pytest.fixture(scope="session")
def params_half():
    """a = 0.5 with e_hat on the z axis."""
    return CostParams(L=2.0, l=1.0)


@pytest.fixture(scope="session")
def params_iso():
    """Degenerate isotropic member a = 0 (warns on construction)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return CostParams(L=2.0, l=0.0)


@pytest.fixture(scope="session")
def bounds_half(params_half):
    return domain_bounds(params_half, grid_n=64)


@pytest.fixture(scope="session")
def bounds_04():
    return domain_bounds(CostParams(L=1.0, l=0.4), grid_n=64)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
