"""Shared helpers for building block-level test fixtures.

Blocks read their weights from a path -> Tensor mapping, so tests can hand
them plain dicts built here instead of a full model. The draw helpers
produce samples that keep finite-difference checks away from gradient
kinks (relu corners, clamp edges, order-statistic ties).
"""

import numpy as np

from signlight.engine import Tensor


def rand_tensor(rng, dims, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, dims))


def conv_params(rng, spec_map, w_scale=1.0):
    """Random conv weights/biases for {path: (out_c, in_c, k)}."""
    params = {}
    for path, (out_c, in_c, k) in spec_map.items():
        bound = w_scale / np.sqrt(in_c * k * k)
        params[path + "/w"] = Tensor(rng.uniform(-bound, bound, (out_c, in_c, k, k)))
        params[path + "/b"] = Tensor(rng.uniform(-0.05, 0.05, (1, out_c, 1, 1)))
    return params


def zero_conv(params, path):
    """Zero out one conv's weight and bias in place."""
    params[path + "/w"].data[...] = 0.0
    params[path + "/b"].data[...] = 0.0


def dau_spec(prefix, c, reduction=4, sa_kernel=5, sa_in=1):
    cr = max(c // reduction, 1)
    return {
        f"{prefix}/conv1": (c, c, 3),
        f"{prefix}/conv2": (c, c, 3),
        f"{prefix}/ca/conv1": (cr, c, 1),
        f"{prefix}/ca/conv2": (c, cr, 1),
        f"{prefix}/sa/conv": (1, sa_in, sa_kernel),
        f"{prefix}/proj": (c, 2 * c, 1),
    }


def skff_spec(prefix, c, n_branches, reduction=4):
    cr = max(c // reduction, 1)
    spec = {f"{prefix}/fuse": (cr, c, 1)}
    for i in range(n_branches):
        spec[f"{prefix}/select{i}"] = (c, cr, 1)
    return spec


def param_tensors(params):
    """Deterministically ordered tensor list for finite-difference sweeps."""
    return [params[k] for k in sorted(params)]
