"""Deterministic counter-based random streams (Philox) with seed derivation."""
from __future__ import annotations

import numpy as np

__all__ = ["RngState", "derive_seed"]


def _seed_sequence(seed: int, path: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=path)


def derive_seed(master: int, *path: int) -> int:
    """Derive a 64-bit child seed from a master seed and an index path.

    Stable across platforms and numpy versions (SeedSequence spawn-key
    hashing); used to give every (seed-rep, episode) cell its own
    independent stream without any strategy-dependent coupling.
    """
    state = _seed_sequence(master, tuple(int(p) for p in path)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


class RngState:
    """A deterministic uniform-sample stream.

    Philox is counter-based: the stream is a pure function of the seed, so
    identical seeds give identical draw sequences on every platform, and a
    stream is never "exhausted". One RngState per episode; not thread-safe
    (episodes running in parallel each own their RngState).
    """

    __slots__ = ("seed", "n_draws", "_gen", "_path")

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & (2**64 - 1)
        self._path = tuple(int(p) for p in _path)
        self.n_draws = 0
        self._gen = np.random.Generator(np.random.Philox(_seed_sequence(self.seed, self._path)))

    def uniform(self) -> float:
        """Next uniform draw in [0, 1)."""
        self.n_draws += 1
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        """Batch of n uniform draws (consumes n draws from the stream)."""
        self.n_draws += int(n)
        return self._gen.random(int(n))

    def normals(self, n: int) -> np.ndarray:
        """Batch of n standard-normal draws."""
        self.n_draws += int(n)
        return self._gen.standard_normal(int(n))

    def integers(self, low: int, high: int) -> int:
        """One integer draw in [low, high)."""
        self.n_draws += 1
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n)."""
        self.n_draws += int(n)
        return self._gen.permutation(int(n))

    def spawn(self, *path: int) -> "RngState":
        """Independent child stream at an integer-labelled path."""
        return RngState(self.seed, _path=self._path + tuple(int(p) for p in path))

    def __repr__(self):
        return f"RngState(seed={self.seed}, n_draws={self.n_draws})"
