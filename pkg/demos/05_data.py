"""
Twin-class synthetic data and the FVF1 container
================================================

Each class pair shares four orthonormal motifs; one class plays them forward,
its twin backward.  The features go to disk as FVF1 files next to a JSON
manifest.
"""

import tempfile
from pathlib import Path

import numpy as np

from itanet.data import (
    FeatureFileError,
    FeatureStore,
    SyntheticSpec,
    decode_features,
    encode_features,
    generate_synthetic,
    load_manifest,
    synthesize_video,
)
from itanet.metrics import frame_similarity, mean_pooled_similarity

spec = SyntheticSpec(num_class_pairs=2, samples_per_class=3, noise=0.0,
                     temporal_jitter=False, spatial_jitter=False)
a = synthesize_video(spec, 0, 0, np.float64).mean(axis=(1, 2))
b = synthesize_video(spec, 1, 1, np.float64).mean(axis=(1, 2))
print("twins, pooled   :", mean_pooled_similarity(a, b))
print("twins, framewise:", frame_similarity(a, b))

with tempfile.TemporaryDirectory() as tmp:
    generate_synthetic(SyntheticSpec(num_class_pairs=2, samples_per_class=3), tmp)
    manifest = load_manifest(Path(tmp) / "manifest.json")
    print("videos per class", {c: len(v) for c, v in manifest.videos_by_class().items()})
    F = FeatureStore(manifest).get(0)
    print("feature map", F.shape, F.dtype)

buf = encode_features(np.ones((8, 3, 3, 64), np.float32))
print("file size", len(buf), "bytes, header", buf[:8])
try:
    decode_features(buf[:-7])
except FeatureFileError as err:
    print("truncated file ->", err.code, "at offset", err.offset)
