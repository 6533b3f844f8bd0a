"""
Frame-wise matching versus pooling and DTW
==========================================

Two videos built from the same motifs in opposite order look identical once
frames are averaged.  Frame-wise cosine sees the difference, and so does an
explicit DTW alignment, at quadratic cost.
"""

import numpy as np

from itanet.metrics import dtw_similarity, frame_similarity, mean_pooled_similarity

rng = np.random.default_rng(1)
q, _ = np.linalg.qr(rng.standard_normal((32, 4)))
motifs = q.T  # four orthonormal vectors

forward = np.repeat(motifs, 2, axis=0)  # 8 frames, each motif held twice
backward = forward[::-1]

print("mean pooled :", mean_pooled_similarity(forward, backward))
print("frame-wise  :", frame_similarity(forward, backward))
print("dtw         :", dtw_similarity(forward, backward))

# a time-shifted copy: DTW forgives the shift, frame-wise matching does not
shifted = np.roll(forward, 1, axis=0)
shifted[0] = forward[0]
print("shifted, frame-wise:", round(frame_similarity(forward, shifted), 3))
print("shifted, dtw       :", round(dtw_similarity(forward, shifted), 3))
