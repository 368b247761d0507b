"""Tour of the tensor engine: ops, the tape, and gradient checking."""

import numpy as np

from signlight.engine import (
    Tape,
    Tensor,
    conv2d,
    grad_check,
    median_pool_channels,
    pool_channels,
    relu,
    sigmoid,
    sum_all,
)

rng = np.random.default_rng(0)

# tensors are (n, c, h, w) float64 arrays
x = Tensor(rng.uniform(0, 1, (1, 3, 6, 6)))
w = Tensor(rng.uniform(-0.3, 0.3, (4, 3, 3, 3)))
b = Tensor.zeros((1, 4, 1, 1))
print("input", x.dims)

# forward ops work with or without a tape; pass one to record gradients
tape = Tape()
h1 = relu(conv2d(x, w, b, padding=1, tape=tape), tape)
gate = sigmoid(median_pool_channels(h1, tape=tape), tape)
print("conv features", h1.dims, "-> spatial gate", gate.dims)

loss = sum_all(h1, tape)
tape.backward(loss)
print("d loss / d w has shape", tape.grad(w).shape)
print("grad magnitude", float(np.abs(tape.grad(w)).max()))

# the median pool keeps one channel: compare against a plain numpy median
med = pool_channels(x, "median").data
print("median pool matches numpy:", np.array_equal(med, np.median(x.data, axis=1, keepdims=True)))

# every primitive passes a central-difference check
err = grad_check(
    lambda x, w, b, tape=None: conv2d(x, w, b, padding=1, tape=tape),
    [x, w, b], rng=np.random.default_rng(1))
print(f"conv2d finite-difference error: {err:.2e}")
