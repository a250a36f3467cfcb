"""Shared fixtures.

The digit dataset is expensive to generate, so it is built (or loaded from
MOB_DATA_DIR if that points at an existing dataset) once per session.
"""

import os
from pathlib import Path

import pytest

from mob import data


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory) -> Path:
    env = os.environ.get("MOB_DATA_DIR")
    if env:
        return Path(env)
    return tmp_path_factory.mktemp("digits")


@pytest.fixture(scope="session")
def digits(data_dir) -> data.DigitData:
    # generates the offline fallback dataset on first use
    return data.load_digit_data(data_dir)
