"""Set partitions of {1..k}, refinement chains and their block statistics.

A partition is stored canonically: blocks sorted by least element, elements
ascending inside each block.  The text form is ``"1,3|2"``; chains join
partitions with ``";"``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

MAX_GROUND = 10
MAX_CHAIN = 6


class PartitionError(ValueError):
    """Malformed partition or chain."""


Block = tuple[int, ...]


def _canonical(blocks: Iterable[Iterable[int]]) -> tuple[Block, ...]:
    out = [tuple(sorted(b)) for b in blocks]
    out.sort(key=lambda b: b[0])
    return tuple(out)


@dataclass(frozen=True)
class Partition:
    blocks: tuple[Block, ...]

    def __post_init__(self):
        if not self.blocks:
            raise PartitionError("partition has no blocks")
        seen: set[int] = set()
        for b in self.blocks:
            if not b:
                raise PartitionError("empty block")
            for x in b:
                if x in seen:
                    raise PartitionError(f"duplicate element {x}")
                seen.add(x)
        object.__setattr__(self, "blocks", _canonical(self.blocks))

    @classmethod
    def of(cls, *blocks: Iterable[int]) -> "Partition":
        return cls(tuple(tuple(b) for b in blocks))

    @classmethod
    def single_block(cls, elements: Iterable[int]) -> "Partition":
        return cls((tuple(elements),))

    @classmethod
    def singletons(cls, elements: Iterable[int]) -> "Partition":
        return cls(tuple((x,) for x in elements))

    @property
    def elements(self) -> tuple[int, ...]:
        return tuple(sorted(x for b in self.blocks for x in b))

    @property
    def k(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __str__(self) -> str:
        return "|".join(",".join(str(x) for x in b) for b in self.blocks)

    def block_of(self, x: int) -> Block:
        for b in self.blocks:
            if x in b:
                return b
        raise KeyError(x)

    def relabel(self) -> "Partition":
        """Map the ground set order-preservingly onto {1..m}."""
        index = {x: i + 1 for i, x in enumerate(self.elements)}
        return Partition(tuple(tuple(index[x] for x in b) for b in self.blocks))


def parse_partition(text: str, k: int) -> Partition:
    if k < 1:
        raise PartitionError("k must be at least 1")
    blocks = []
    for chunk in text.strip().split("|"):
        chunk = chunk.strip()
        if not chunk:
            raise PartitionError("empty block")
        try:
            blocks.append(tuple(int(x) for x in chunk.split(",")))
        except ValueError as exc:
            raise PartitionError(f"bad element in {chunk!r}") from exc
    p = Partition(tuple(blocks))
    elems = set(p.elements)
    bad = [x for x in elems if x < 1 or x > k]
    if bad:
        raise PartitionError(f"element {bad[0]} outside 1..{k}")
    missing = set(range(1, k + 1)) - elems
    if missing:
        raise PartitionError(f"missing element {min(missing)}")
    return p


def refines(alpha: Partition, beta: Partition) -> bool:
    """True when every block of ``alpha`` is a union of blocks of ``beta``."""
    if alpha.elements != beta.elements:
        raise PartitionError("partitions live on different ground sets")
    owner = {}
    for i, b in enumerate(alpha.blocks):
        for x in b:
            owner[x] = i
    return all(len({owner[x] for x in b}) == 1 for b in beta.blocks)


def project(alpha: Partition, B: Iterable[int]) -> Partition:
    B = set(B)
    if not B:
        raise PartitionError("projection onto an empty set")
    if not B <= set(alpha.elements):
        raise PartitionError("projection set is not a subset of the ground set")
    return Partition(tuple(tuple(x for x in b if x in B) for b in alpha.blocks if B.intersection(b)))


def _set_partitions(elements: tuple[int, ...]) -> list[tuple[Block, ...]]:
    # restricted growth strings, first element always opens block 0
    n = len(elements)
    out = []
    labels = [0] * n

    def rec(i: int, nblocks: int):
        if i == n:
            blocks: list[list[int]] = [[] for _ in range(nblocks)]
            for x, lab in zip(elements, labels):
                blocks[lab].append(x)
            out.append(tuple(tuple(b) for b in blocks))
            return
        for lab in range(nblocks + 1):
            labels[i] = lab
            rec(i + 1, max(nblocks, lab + 1))

    if n:
        rec(1, 1)
    return out


@lru_cache(maxsize=None)
def _partitions_of(elements: tuple[int, ...]) -> tuple[Partition, ...]:
    return tuple(Partition(b) for b in _set_partitions(elements))


def enumerate_partitions(k: int) -> list[Partition]:
    if not 1 <= k <= MAX_GROUND:
        raise PartitionError(f"k must lie in 1..{MAX_GROUND}")
    return list(_partitions_of(tuple(range(1, k + 1))))


@lru_cache(maxsize=None)
def _refinements(p: Partition) -> tuple[Partition, ...]:
    per_block = [_partitions_of(b) for b in p.blocks]
    return tuple(
        Partition(tuple(blk for part in combo for blk in part.blocks))
        for combo in itertools.product(*per_block)
    )


def refinements(p: Partition) -> tuple[Partition, ...]:
    """Every partition that ``p`` can break into, ``p`` itself included."""
    return _refinements(p)


@dataclass(frozen=True)
class Chain:
    """A sequence of partitions of {1..k}.

    Forward chains break (each entry refines into the next) and carry the
    implicit endpoints one block before and singletons after.  Coalescent
    chains merge and carry the endpoints the other way round.
    """

    parts: tuple[Partition, ...]
    coalescent: bool = False

    def __post_init__(self):
        if not self.parts:
            raise PartitionError("chain needs at least one partition")
        ks = {p.elements for p in self.parts}
        if len(ks) != 1:
            raise PartitionError("chain mixes ground sets")
        levels = self.levels
        for a, b in zip(levels, levels[1:]):
            ok = refines(a, b) if not self.coalescent else refines(b, a)
            if not ok:
                raise PartitionError(f"{a} -> {b} breaks the chain order")

    @property
    def k(self) -> int:
        return self.parts[0].k

    @property
    def n(self) -> int:
        return len(self.parts)

    @property
    def levels(self) -> tuple[Partition, ...]:
        """Parts with both implicit endpoints attached."""
        ground = self.parts[0].elements
        top, bottom = Partition.single_block(ground), Partition.singletons(ground)
        if self.coalescent:
            top, bottom = bottom, top
        return (top, *self.parts, bottom)

    def __str__(self) -> str:
        return ";".join(str(p) for p in self.parts)

    def reversed(self) -> "Chain":
        return Chain(tuple(reversed(self.parts)), not self.coalescent)


def parse_chain(text: str, k: int, coalescent: bool = False) -> Chain:
    return Chain(tuple(parse_partition(t, k) for t in text.split(";")), coalescent)


def enumerate_chains(k: int, n: int, coalescent: bool = False) -> list[Chain]:
    if not 1 <= n <= MAX_CHAIN:
        raise PartitionError(f"chain length must lie in 1..{MAX_CHAIN}")
    out: list[tuple[Partition, ...]] = []

    def rec(prefix: tuple[Partition, ...]):
        if len(prefix) == n:
            out.append(prefix)
            return
        for nxt in _refinements(prefix[-1]):
            rec(prefix + (nxt,))

    for first in enumerate_partitions(k):
        rec((first,))
    if coalescent:
        return [Chain(tuple(reversed(c)), True) for c in out]
    return [Chain(c) for c in out]


def _contained_counts(coarse: Partition, fine: Partition) -> dict[Block, int]:
    return {B: sum(1 for b in fine.blocks if set(b) <= set(B)) for B in coarse.blocks}


def breakage_numbers(chain: Chain) -> list[dict[Block, int]]:
    """``out[i][G]`` is the number of blocks of level i+1 inside block G of level i.

    Levels run 0..n with level 0 the single block.
    """
    if chain.coalescent:
        raise PartitionError("breakage numbers need a forward chain")
    lv = chain.levels
    return [_contained_counts(lv[i], lv[i + 1]) for i in range(len(lv) - 1)]


def merger_numbers(chain: Chain) -> dict[int, dict[Block, int]]:
    """``out[i][G]`` counts blocks of level i-1 merged into block G of level i.

    Levels run 1..n+1 with level 0 the singletons and level n+1 the single block.
    """
    if not chain.coalescent:
        raise PartitionError("merger numbers need a coalescent chain")
    lv = chain.levels
    return {i: _contained_counts(lv[i], lv[i - 1]) for i in range(1, len(lv))}


def is_maximal(path: Sequence[Partition]) -> tuple[bool, tuple[int, ...]]:
    """Check that each step breaks exactly one block, returning the split sizes."""
    qs = []
    for a, b in zip(path, path[1:]):
        if a.elements != b.elements or not refines(a, b):
            return False, ()
        broken = [B for B, c in _contained_counts(a, b).items() if c > 1]
        if len(broken) != 1:
            return False, ()
        qs.append(1 + len(b) - len(a))
    if not qs:
        return False, ()
    return True, tuple(qs)


def maximal_paths(k: int, binary_only: bool = False) -> list[tuple[Partition, ...]]:
    """All maximal breakage paths from one block down to singletons."""
    ground = tuple(range(1, k + 1))
    end = Partition.singletons(ground)
    out = []

    def rec(path):
        cur = path[-1]
        if cur == end:
            out.append(tuple(path))
            return
        for i, B in enumerate(cur.blocks):
            if len(B) < 2:
                continue
            rest = cur.blocks[:i] + cur.blocks[i + 1:]
            for split in _partitions_of(B):
                if len(split) < 2 or (binary_only and len(split) != 2):
                    continue
                rec(path + [Partition(rest + split.blocks)])

    rec([Partition.single_block(ground)])
    return out


def parse_path(text: str, k: int) -> tuple[Partition, ...]:
    return tuple(parse_partition(t, k) for t in text.split(";"))


def ranked_binary_count(k: int) -> int:
    if k < 2:
        raise PartitionError("ranked binary trees need k >= 2")
    return math.factorial(k) * math.factorial(k - 1) // 2 ** (k - 1)


def extensions(p: Partition, new: int) -> list[Partition]:
    """Partitions of elements + {new} whose restriction to the old elements is ``p``."""
    out = [Partition(p.blocks[:i] + (p.blocks[i] + (new,),) + p.blocks[i + 1:]) for i in range(len(p))]
    out.append(Partition(p.blocks + ((new,),)))
    return out
