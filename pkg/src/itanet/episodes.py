"""Class splits and C-way K-shot episode sampling.

Episode streams use :class:`Xoshiro256`, a fixed, documented generator, so a
seed names the same episode sequence on every platform:

* state: four 64-bit words, filled by successive ``splitmix64`` outputs of the
  seed;
* output: xoshiro256** (``rotl(s1 * 5, 7) * 9``);
* ``below(n)``: rejection sampling on the top of the 64-bit range so every
  residue is equally likely;
* shuffles: Fisher-Yates from the last index down, applied to id lists that are
  sorted first so manifest order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

MASK64 = (1 << 64) - 1


class SamplingError(ValueError):
    """Not enough classes or videos to build the requested split or episode."""


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** seeded through splitmix64."""

    def __init__(self, seed: int = 0):
        sm = seed & MASK64
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self.s = state

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, items: Sequence, k: int) -> list:
        """``k`` items without replacement (shuffle of a sorted copy)."""
        pool = sorted(items)
        if k > len(pool):
            raise SamplingError(f"cannot draw {k} items from {len(pool)}")
        return self.shuffle(pool)[:k]

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def getstate(self) -> tuple[int, int, int, int]:
        return tuple(self.s)

    def setstate(self, state: Sequence[int]) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state has four words")
        self.s = [int(w) & MASK64 for w in state]


@dataclass(frozen=True)
class SplitSpec:
    train_classes: tuple[int, ...]
    val_classes: tuple[int, ...]
    test_classes: tuple[int, ...]

    def part(self, name: str) -> tuple[int, ...]:
        return {"train": self.train_classes, "val": self.val_classes, "test": self.test_classes}[name]


def split_classes(class_ids: Sequence[int], sizes: tuple[int, int, int], seed: int) -> SplitSpec:
    """Seeded partition into train/val/test class sets of the given sizes.

    A zero-sized validation split is allowed; train and test must be nonempty.
    """
    a, b, c = sizes
    if a <= 0 or c <= 0 or b < 0:
        raise SamplingError(f"train and test splits must be nonempty, got sizes {sizes}")
    ids = sorted(set(class_ids))
    if a + b + c > len(ids):
        raise SamplingError(f"{a}+{b}+{c} classes requested, only {len(ids)} available")
    order = Xoshiro256(seed).shuffle(ids)
    return SplitSpec(
        tuple(sorted(order[:a])),
        tuple(sorted(order[a:a + b])),
        tuple(sorted(order[a + b:a + b + c])),
    )


@dataclass(frozen=True)
class Item:
    video_id: int
    global_label: int
    episode_label: int


@dataclass(frozen=True)
class Episode:
    support: tuple[Item, ...]
    query: tuple[Item, ...]
    way: int
    shot: int
    queries_per_class: int

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted({it.global_label for it in self.support}))

    def validate(self) -> None:
        """Raise ``AssertionError`` if any structural invariant is broken."""
        C, K, q = self.way, self.shot, self.queries_per_class
        assert len(self.support) == C * K and len(self.query) == C * q
        items = self.support + self.query
        assert len({it.video_id for it in items}) == len(items), "duplicate video"
        assert len({it.global_label for it in items}) == C
        assert sorted({it.episode_label for it in items}) == list(range(C))
        for lab in range(C):
            assert sum(it.episode_label == lab for it in self.support) == K
            assert sum(it.episode_label == lab for it in self.query) == q
        mapping = {}
        for it in items:
            assert mapping.setdefault(it.global_label, it.episode_label) == it.episode_label


def relabel_episode(global_labels) -> tuple[dict[int, int], dict[int, int]]:
    """Bijection between global labels and ``0..C-1`` in sorted global order."""
    ordered = sorted(set(global_labels))
    to_local = {g: i for i, g in enumerate(ordered)}
    return to_local, {i: g for g, i in to_local.items()}


def sample_episode(
    videos_by_class: Mapping[int, Sequence[int]],
    classes: Sequence[int],
    way: int,
    shot: int,
    queries: int,
    rng: Xoshiro256,
) -> Episode:
    """Draw one episode from ``classes`` using the per-class video pools."""
    if len(set(classes)) < way:
        raise SamplingError(f"{way}-way episode needs {way} classes, split has {len(set(classes))}")
    chosen = rng.sample(list(set(classes)), way)
    to_local, _ = relabel_episode(chosen)
    support, query = [], []
    for cls in chosen:
        pool = videos_by_class.get(cls, ())
        if len(pool) < shot + queries:
            raise SamplingError(
                f"class {cls} has {len(pool)} videos, episode needs {shot}+{queries}"
            )
        picked = rng.sample(pool, shot + queries)
        lab = to_local[cls]
        support.extend(Item(v, cls, lab) for v in picked[:shot])
        query.extend(Item(v, cls, lab) for v in picked[shot:])
    return Episode(tuple(support), tuple(query), way, shot, queries)


class EpisodeStream:
    """Reproducible iterator of episodes over one split part."""

    def __init__(self, videos_by_class, classes, way=5, shot=1, queries=5, seed=0):
        self.videos_by_class = {c: sorted(v) for c, v in videos_by_class.items()}
        self.classes = sorted(classes)
        self.way, self.shot, self.queries = way, shot, queries
        self.rng = Xoshiro256(seed)

    def __iter__(self):
        return self

    def __next__(self) -> Episode:
        return sample_episode(self.videos_by_class, self.classes, self.way, self.shot, self.queries, self.rng)

    def take(self, n: int) -> list[Episode]:
        return [next(self) for _ in range(n)]
