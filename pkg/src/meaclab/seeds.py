"""Deterministic named sub-streams derived from a single master seed.

Every stochastic component (noise renders, link jitter, nav bits, Monte
Carlo trials) draws from its own labeled stream so that components can be
re-seeded independently and run order never changes results.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master_seed: int, label: str) -> int:
    """Map (master seed, label) to a stable 63-bit child seed."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *label.encode("utf-8")])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def derived_rng(master_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label))
