"""
Reverse-mode gradients on a tape
================================

Every primitive in ``itanet.autodiff`` records itself on the active tape, and
``Tape.backward`` walks the record in reverse.  Here we fit a tiny softmax
regression and compare the tape gradient with central differences.
"""

import numpy as np

from itanet import autodiff as ad

rng = np.random.default_rng(0)
X = rng.standard_normal((20, 3))
y = rng.integers(0, 4, size=20)
W = ad.Parameter(0.1 * rng.standard_normal((3, 4)), name="W")


def loss():
    return ad.cross_entropy(ad.matmul(X, W), y)


# one gradient, read straight off the parameter
with ad.Tape() as tape:
    L = loss()
W.zero_grad()
tape.backward(L)
print("loss", float(L.data))
print("dL/dW row 0", W.grad[0])

# central differences agree to roughly 1e-9 in float64
print("max relative error", ad.grad_check(loss, [W]))

# a few plain gradient steps
for step in range(50):
    W.zero_grad()
    with ad.Tape() as tape:
        L = loss()
    tape.backward(L)
    W.data -= 0.5 * W.grad
print("loss after 50 steps", float(L.data))
