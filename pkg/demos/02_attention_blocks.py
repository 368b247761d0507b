"""The attention blocks that make up the enhancer, one at a time."""

import numpy as np

from signlight.engine import Tensor
from signlight.network import (
    NetConfig,
    channel_attention,
    dau,
    forward,
    init_model,
    mrb,
    skff,
    spatial_attention,
)

rng = np.random.default_rng(7)


def conv(path, out_c, in_c, k, params):
    bound = 1.0 / np.sqrt(in_c * k * k)
    params[path + "/w"] = Tensor(rng.uniform(-bound, bound, (out_c, in_c, k, k)))
    params[path + "/b"] = Tensor.zeros((1, out_c, 1, 1))


x = Tensor(rng.uniform(0, 1, (1, 8, 10, 10)))

# channel attention squeezes to a per-channel gate in (0, 1)
p = {}
conv("ca/conv1", 2, 8, 1, p)
conv("ca/conv2", 8, 2, 1, p)
ca_out = channel_attention(x, p, "ca")
print("channel attention:", x.dims, "->", ca_out.dims)

# spatial attention pools across channels with a median, then convolves
p = {}
conv("sa/conv", 1, 1, 5, p)
sa_out = spatial_attention(x, p, "sa")
print("spatial attention:", x.dims, "->", sa_out.dims)

# the dual-attention unit runs both gates over conv features and adds
# the projection back onto its input
p = {}
conv("d/conv1", 8, 8, 3, p)
conv("d/conv2", 8, 8, 3, p)
conv("d/ca/conv1", 2, 8, 1, p)
conv("d/ca/conv2", 8, 2, 1, p)
conv("d/sa/conv", 1, 1, 5, p)
conv("d/proj", 8, 16, 1, p)
print("dau keeps dims:", dau(x, p, "d").dims == x.dims)

# zero the projection and the unit turns into a bit-exact identity
p["d/proj/w"] = Tensor.zeros((8, 16, 1, 1))
p["d/proj/b"] = Tensor.zeros((1, 8, 1, 1))
print("zeroed dau is identity:", np.array_equal(dau(x, p, "d").data, x.data))

# skff fuses branches with learned convex weights, so the result always
# stays inside the pointwise min/max envelope of its inputs
p = {}
conv("k/fuse", 2, 8, 1, p)
conv("k/select0", 8, 2, 1, p)
conv("k/select1", 8, 2, 1, p)
a = Tensor(rng.uniform(0, 1, (1, 8, 10, 10)))
fused = skff([x, a], p, "k").data
lo = np.minimum(x.data, a.data)
hi = np.maximum(x.data, a.data)
print("skff inside envelope:", bool(np.all(fused >= lo - 1e-12) and np.all(fused <= hi + 1e-12)))

# the full network wires these into multi-scale residual blocks
params = init_model(NetConfig.small(seed=0))
frame = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
print("one multi-scale block:", mrb(x, params, "rrg0/mrb0", 2).dims)
print("full network:", frame.dims, "->", forward(frame, params).dims)
print("parameter tensors:", len(list(params.paths())))
