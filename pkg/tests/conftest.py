# SPDX-License-Identifier: Apache-2.0

"""Shared fixtures for the databuy test suite."""

import pytest

from databuy.continuous import ContinuousParams
from databuy.model import ModelParams


@pytest.fixture
def worked():
    """rho = sigma = 1, B = 1, c = 0.75."""
    return ModelParams(rho=1.0, sigma=1.0, c=0.75, B=1.0)


@pytest.fixture
def unit_continuous():
    return ContinuousParams(c=1.0, B=1.0, f=0.0)
