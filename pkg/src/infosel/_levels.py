"""Shared comparison for estimated error ratios against a target level."""

from __future__ import annotations

import numpy as np

# Ratios such as (1/50) / (3/45) and 3 * 0.3 / 45 are equal in exact
# arithmetic but round differently; a relative slack keeps every procedure
# treating such ties as passing.
LEVEL_RTOL = 1e-12


def at_most(value, level):
    """``value <= level`` with relative slack ``LEVEL_RTOL``."""
    return np.asarray(value) <= np.asarray(level) * (1 + LEVEL_RTOL)
