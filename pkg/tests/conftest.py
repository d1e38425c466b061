import warnings

import pytest


@pytest.fixture(autouse=True)
def _quiet_radius_warnings():
    # most tests deliberately run thin annuli (R < 10r); the warning is
    # exercised explicitly in test_excursion
    with warnings.catch_warnings():
        warnings.filterwarnings(
            "ignore", message="R = .* exit-chain concentration")
        yield
