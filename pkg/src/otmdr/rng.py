"""Counter-based random streams keyed by (seed, lane).

A stream's key is a BLAKE2b digest of the seed and the lane fields
``(epoch, step, member, particle, purpose)``. Draws are SplitMix64 outputs at
consecutive counters under that key, so any lane can be regenerated without
replaying other lanes, and the order in which lanes are consumed never
affects their contents.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct

import numpy as np

from otmdr import kernels

_MASK64 = (1 << 64) - 1


def lane_key(seed: int, epoch: int, step: int, member: int, particle: int, purpose: str) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"otmdr-rng")
    h.update(struct.pack("<Qqqqq", seed & _MASK64, epoch, step, member, particle))
    h.update(purpose.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclasses.dataclass
class RngStream:
    """One lane of the counter-based generator.

    Draw methods advance ``counter``; two streams built with the same fields
    produce identical sequences. ``derive`` returns a fresh stream (counter 0)
    on a different lane.
    """

    seed: int
    epoch: int = 0
    step: int = 0
    member: int = 0
    particle: int = 0
    purpose: str = ""
    counter: int = 0

    def __post_init__(self):
        self.key = lane_key(self.seed, self.epoch, self.step, self.member, self.particle, self.purpose)

    @property
    def lane(self) -> tuple:
        return (self.epoch, self.step, self.member, self.particle, self.purpose)

    def derive(self, **changes) -> RngStream:
        fields = dict(
            seed=self.seed,
            epoch=self.epoch,
            step=self.step,
            member=self.member,
            particle=self.particle,
            purpose=self.purpose,
        )
        unknown = set(changes) - set(fields)
        if unknown:
            raise TypeError(f"unknown lane fields: {sorted(unknown)}")
        fields.update(changes)
        return RngStream(**fields)

    def _advance(self, n: int) -> int:
        start = self.counter
        self.counter += n
        return start

    def uint64(self, n: int) -> np.ndarray:
        return kernels.splitmix_block(self.key, self._advance(n), n)

    def uniform(self, n: int) -> np.ndarray:
        return kernels.uniform_block(self.key, self._advance(n), n)

    def normal(self, n: int, std: float = 1.0) -> np.ndarray:
        z = kernels.normal_block(self.key, self._advance(2 * ((n + 1) // 2)), n)
        if std != 1.0:
            z = z * std
        return z

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation via stable argsort of uniform keys."""
        return np.argsort(self.uniform(n), kind="stable")
