"""
Reproducible episodes
=====================

Episodes are drawn with xoshiro256** seeded through splitmix64, so the same
seed yields the same video ids on any platform, regardless of the order in
which classes or videos were listed.
"""

from collections import Counter

from itanet.episodes import EpisodeStream, split_classes

pools = {c: list(range(100 * c, 100 * c + 12)) for c in range(10)}

stream = EpisodeStream(pools, range(10), way=5, shot=1, queries=5, seed=42)
ep = next(stream)
print("classes", ep.classes)
print("support", [(it.video_id, it.episode_label) for it in ep.support])
print("first queries", [(it.video_id, it.episode_label) for it in ep.query[:5]])

again = next(EpisodeStream(pools, reversed(range(10)), seed=42))
print("same draw from reordered input:", again.support == ep.support)

# class frequency over many episodes is flat
counts = Counter()
for e in EpisodeStream(pools, range(10), seed=0).take(2000):
    counts.update(e.classes)
print("class counts", dict(sorted(counts.items())))

split = split_classes(range(100), (64, 12, 24), seed=5)
print("split sizes", len(split.train_classes), len(split.val_classes), len(split.test_classes))
