"""Shared random walks for property tests."""

from __future__ import annotations

import random

from atmp.generators import gen_env
from atmp.semantics import auto_grid, env_steps, gt_steps


def env_walk(seed: int, length: int = 4):
    """A generated global state and canonical environment, advanced along a random env path."""
    rng = random.Random(seed)
    st, env = gen_env(rng)
    for _ in range(rng.randint(0, length)):
        steps = env_steps(env, auto_grid(None, env))
        if not steps:
            break
        _, env = rng.choice(steps)
    return rng, st, env


def global_walk(seed: int, length: int = 4):
    rng = random.Random(seed)
    st, _ = gen_env(rng)
    for _ in range(rng.randint(0, length)):
        steps = gt_steps(st, auto_grid(st))
        if not steps:
            break
        _, st = rng.choice(steps)
    return rng, st
