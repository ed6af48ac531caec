"""Counter-based random streams keyed by (seed, role, path index).

Each Monte Carlo path owns a Philox stream derived from
``SeedSequence(seed, spawn_key=(role, path))``.  A path's draws therefore do
not depend on how paths are grouped into blocks or scheduled onto workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# distinct roles keep e.g. the x-chain and y-chain of a Harnack check independent
ROLES = {
    "main": 0,
    "x": 1,
    "y": 2,
    "control": 3,
    "chain_a": 4,
    "chain_b": 5,
    "independent_plus": 6,
    "independent_minus": 7,
    "reference": 8,
}


def role_id(role: str | int) -> int:
    if isinstance(role, int):
        return role
    try:
        return ROLES[role]
    except KeyError:
        raise ValueError(f"unknown stream role {role!r}") from None


def path_generator(seed: int, path: int, role: str | int = "main") -> np.random.Generator:
    """Independent Philox generator for one path."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(role_id(role), int(path)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PathBlockNoise:
    """Standard normal draws for a contiguous block of paths.

    ``next(n_steps)`` returns an array of shape ``(n_steps, n_paths, *shape)``
    where row ``i`` continues the stream of path ``start + i``.  Drawing in
    chunks of any size yields the same numbers as drawing step by step.
    """

    seed: int
    start: int
    n_paths: int
    shape: tuple[int, ...]
    role: str | int = "main"

    def __post_init__(self) -> None:
        self._gens = [path_generator(self.seed, self.start + i, self.role) for i in range(self.n_paths)]

    def next(self, n_steps: int) -> np.ndarray:
        out = np.empty((n_steps, self.n_paths) + tuple(self.shape))
        for i, g in enumerate(self._gens):
            out[:, i] = g.standard_normal((n_steps,) + tuple(self.shape))
        return out
