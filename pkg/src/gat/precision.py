"""Precision modes.

Two modes exist: "test" (float64, used by gradient-check suites) and "run"
(float32, used for training and evaluation).  The mode fixes the dtype of
every tensor created while it is active.
"""

import contextlib

import numpy as np

_MODES = {"test": np.float64, "run": np.float32}
_current = "run"


def set_mode(mode):
    global _current
    if mode not in _MODES:
        raise ValueError(f"unknown precision mode {mode!r}; expected 'test' or 'run'")
    _current = mode


def get_mode():
    return _current


def dtype():
    """Default dtype for the active mode."""
    return _MODES[_current]


@contextlib.contextmanager
def mode(name):
    """Temporarily switch precision mode."""
    prev = _current
    set_mode(name)
    try:
        yield
    finally:
        set_mode(prev)
