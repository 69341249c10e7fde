"""Shared fixtures.

Expansion tables are cached for the whole session; the SYM ``nu = 4`` table
to order 4 takes close to a minute and is used by several modules.
"""

from __future__ import annotations

from functools import lru_cache

import pytest

from cpgf.config import ModelConfig
from cpgf.series import compute_series


@lru_cache(maxsize=None)
def cached_table(nu: int, scenario: str, s_max: int, zero_target: bool = False, keep_sums: bool = False):
    return compute_series(ModelConfig(nu, scenario), s_max, zero_target=zero_target, keep_sums=keep_sums)


@pytest.fixture(scope="session")
def table():
    """``table(nu, scenario, s_max, zero_target=False, keep_sums=False)``, memoized."""
    return cached_table


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip tests marked slow")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
