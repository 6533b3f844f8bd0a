"""
Context encoders
================

Spatial attention mixes the H*W cells of each frame, the channel gate
re-weights feature channels, and temporal attention mixes frames after a
positional table is added.  Shapes are preserved end to end.
"""

import numpy as np

from itanet.attention import (
    MultiHeadParams,
    PositionalEncoder,
    sinusoidal_table,
    spatial_context_encode,
    temporal_context_encode,
    temporal_tokenize,
)

rng = np.random.default_rng(0)
n_t, h, w, c = 8, 3, 3, 16
F = rng.standard_normal((n_t, h, w, c))

spatial = MultiHeadParams.init(c, heads=4, rng=rng, dtype=np.float64)
F_sp = spatial_context_encode(F, spatial)
print("spatial output", F_sp.shape)

# the sinusoidal table: even channels sin, odd channels cos
table = sinusoidal_table(n_t, c)
print("position 0 row", table[0, :4])

enc = PositionalEncoder.init(n_t, c, dtype=np.float64)
tokens = temporal_tokenize(F_sp, enc)
temporal = MultiHeadParams.init(c, heads=4, rng=rng, dtype=np.float64)
Z = temporal_context_encode(tokens, temporal)
print("frame tokens", tokens.shape, "-> temporal output", Z.shape)

# without positions, reversing the frames just reverses the output
plain = temporal_context_encode(temporal_tokenize(F, None), temporal).data
flipped = temporal_context_encode(temporal_tokenize(F[::-1], None), temporal).data
print("permutation equivariant:", np.allclose(plain[::-1], flipped))
