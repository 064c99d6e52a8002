"""Deterministic RNG stream derivation.

Every random draw in the package comes from a child stream addressed by a
small integer key appended to the master seed. Streams for distinct keys are
statistically independent, and adding entities (users, targets, trials) never
perturbs the draws of existing streams.
"""

from __future__ import annotations

import numpy as np

# stream-kind codes; first key element after the master seed
KIND_USERS = 1
KIND_TARGETS = 2
KIND_CH_USER = 10      # h: DL AP -> user
KIND_CH_TARGET_DL = 11  # g_dl: DL AP -> target
KIND_CH_TARGET_UL = 12  # g_ul: target -> UL AP
KIND_CH_INTER_AP = 13   # f: DL AP -> UL AP
KIND_NOISE = 20
KIND_SYMBOLS = 21
KIND_SHADOWING = 22
KIND_GENERIC = 30


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the child generator addressed by (seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, *key) into a single integer usable as a new master seed."""
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1)[0])
