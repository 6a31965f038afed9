"""Side-information vectors, their distance, and the per-reference phase codes.

A side vector marks which of the ``K`` references are present for a token.
Reference tokens carry a one-hot vector; video tokens carry the set of
references mentioned in their shot prompt (possibly empty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class SideInfoVec:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise ValueError("side vector must have at least one entry")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"side bits must be 0/1, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def zeros(cls, num_refs: int) -> SideInfoVec:
        return cls((0,) * num_refs)

    @classmethod
    def one_hot(cls, ref: int, num_refs: int) -> SideInfoVec:
        """One-hot vector for reference ``ref`` (1-based)."""
        if not 1 <= ref <= num_refs:
            raise ValueError(f"reference index {ref} outside 1..{num_refs}")
        return cls(tuple(1 if i == ref else 0 for i in range(1, num_refs + 1)))

    @classmethod
    def from_string(cls, text: str) -> SideInfoVec:
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"invalid side bit string {text!r}")
        return cls(tuple(int(c) for c in text))

    @property
    def num_refs(self) -> int:
        return len(self.bits)

    def is_one_hot(self) -> bool:
        return sum(self.bits) == 1

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __str__(self) -> str:
        return self.to_string()

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)


def _bits(v: SideInfoVec | Iterable[int]) -> tuple[int, ...]:
    return v.bits if isinstance(v, SideInfoVec) else tuple(int(b) for b in v)


def side_distance(a: SideInfoVec | Sequence[int], b: SideInfoVec | Sequence[int]) -> tuple[int, ...]:
    """Per-reference disagreement ``|a_i - b_i|``."""
    a, b = _bits(a), _bits(b)
    if len(a) != len(b):
        raise ValueError(f"side vectors differ in length: {len(a)} vs {len(b)}")
    return tuple(abs(x - y) for x, y in zip(a, b))


def ref_phase(i: int, num_refs: int) -> float:
    """Phase code of reference ``i``: ``(2*pi*i - pi) / K``.

    The K codes split the circle into equal arcs offset by half a step, so
    none of them is a multiple of 2*pi.
    """
    if num_refs < 1:
        raise ValueError(f"num_refs must be positive, got {num_refs}")
    if not 1 <= i <= num_refs:
        raise ValueError(f"reference index {i} outside 1..{num_refs}")
    return (2.0 * math.pi * i - math.pi) / num_refs


def side_angles(delta: Sequence[int], num_refs: int) -> tuple[float, ...]:
    if len(delta) != num_refs:
        raise ValueError(f"side delta has length {len(delta)}, expected {num_refs}")
    return tuple(ref_phase(i, num_refs) * d for i, d in enumerate(delta, start=1))
