"""Process-wide switches read from the environment.

``STGCRN_TEST_MODE=1`` forces 64-bit floats everywhere.
``ASTGCRN_NUMBA=0`` disables the numba kernels and uses the numpy fallback.
"""
import os

import numpy as np


def _flag(name, default):
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off", "")


def test_mode():
    return _flag("STGCRN_TEST_MODE", False)


def numba_requested():
    return _flag("ASTGCRN_NUMBA", True)


def resolve_dtype(name="float64"):
    """Float dtype for a run; test mode always wins with float64."""
    if test_mode():
        return np.float64
    if name in ("float64", "f8", "64"):
        return np.float64
    if name in ("float32", "f4", "32"):
        return np.float32
    from .errors import ConfigurationError

    raise ConfigurationError(f"unknown dtype {name!r}")
