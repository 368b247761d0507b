"""Dense 4-D tensor engine with taped reverse-mode gradients.

Every value is a (batch, channel, height, width) array, float64 by default
(float32 is tolerated for inference-only use). Primitives are plain
functions; pass a Tape to have their backward rules recorded, then call
``Tape.backward`` on a scalar result to populate per-tensor gradient
buffers. Gradients are checked against central finite differences by
``grad_check`` and ``grad_check_directional``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "ConfigError",
    "NotOnTapeError",
    "Tensor",
    "Tape",
    "conv2d",
    "pool_channels",
    "median_pool_channels",
    "global_pool_spatial",
    "resize_bilinear",
    "add",
    "mul",
    "relu",
    "sigmoid",
    "clamp01",
    "softmax_over_branches",
    "concat_channels",
    "sum_all",
    "grad_check",
    "grad_check_directional",
    "sample_without_channel_ties",
    "min_kink_distance",
    "draw_kink_free",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

RESIZE_SCALES = (0.25, 0.5, 2.0, 4.0)


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class ConfigError(ValueError):
    """An argument lies outside the supported set for an operation."""


class NotOnTapeError(ValueError):
    """backward() started from a tensor the tape never produced."""


class Tensor:
    """A dense (n, c, h, w) array of reals, row-major.

    Tensors behave as values: operations never mutate their inputs, and a
    tensor that has been recorded on a tape must not be written afterwards.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(
                f"tensor must be 4-D (n, c, h, w), got shape {arr.shape}"
            )
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr

    @classmethod
    def zeros(cls, dims: tuple[int, int, int, int], dtype=np.float64) -> "Tensor":
        return cls(np.zeros(dims, dtype=dtype))

    @classmethod
    def full(cls, dims, value, dtype=np.float64) -> "Tensor":
        return cls(np.full(dims, value, dtype=dtype))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, dims {self.dims}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype})"


class Tape:
    """Ordered trace of primitive applications and their backward rules.

    A tape is single-owner: record during one forward pass, call
    ``backward`` once. The trace order is already topological, so the
    reverse sweep visits each record exactly once and accumulates into
    gradient buffers keyed by tensor identity. A buffer always has the
    same dims as its value.
    """

    def __init__(self):
        self._records: list[
            tuple[tuple[Tensor, ...], tuple[Tensor, ...], Callable, str]
        ] = []
        self._produced: set[int] = set()
        self._tensors: dict[int, Tensor] = {}
        self._grads: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._records)

    def record(
        self,
        outputs: "Tensor | Sequence[Tensor]",
        inputs: Sequence[Tensor],
        backward: Callable,
        name: str = "",
    ) -> None:
        """Append one primitive application.

        ``backward`` receives one gradient array per output (zeros where an
        output was never used) and returns one gradient array per input, or
        None for inputs that need no gradient. ``name`` tags the op for
        introspection (kink screening); it does not affect the sweep.
        """
        outs = (outputs,) if isinstance(outputs, Tensor) else tuple(outputs)
        ins = tuple(inputs)
        self._records.append((outs, ins, backward, name))
        for t in outs:
            self._produced.add(id(t))
            self._tensors[id(t)] = t
        for t in ins:
            self._tensors[id(t)] = t

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from a scalar, populating gradient buffers."""
        if id(loss) not in self._produced:
            raise NotOnTapeError(
                "loss tensor is not on tape: it was not produced by a recorded op"
            )
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got dims {loss.dims}")
        self._grads.clear()
        self._grads[id(loss)] = np.ones_like(loss.data)
        for outs, ins, bwd, _name in reversed(self._records):
            gouts = [self._grads.get(id(o)) for o in outs]
            if all(g is None for g in gouts):
                continue
            gouts = [
                g if g is not None else np.zeros_like(o.data)
                for g, o in zip(gouts, outs)
            ]
            gins = bwd(*gouts)
            if isinstance(gins, np.ndarray):
                gins = (gins,)
            for t, g in zip(ins, gins):
                if g is None:
                    continue
                buf = self._grads.get(id(t))
                if buf is None:
                    self._grads[id(t)] = np.array(g, dtype=t.data.dtype)
                else:
                    buf += g

    def grad(self, t: Tensor) -> np.ndarray | None:
        """Gradient buffer for ``t``, or None if the loss never reached it."""
        return self._grads.get(id(t))


# ---------------------------------------------------------------------------
# primitives


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor,
    stride: int = 1,
    padding: int = 0,
    tape: Tape | None = None,
) -> Tensor:
    """2-D cross-correlation with zero padding plus a per-channel bias.

    ``w`` is (out_c, in_c, kh, kw); ``b`` holds out_c values. Output height
    is (h + 2*padding - kh) // stride + 1, likewise for width.
    """
    if not isinstance(stride, int) or stride < 1:
        raise ConfigError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ConfigError(f"padding must be a non-negative int, got {padding!r}")
    out_c, in_c, kh, kw = w.dims
    if x.c != in_c:
        raise ShapeError(
            f"conv2d channel mismatch: x dims {x.dims} has {x.c} channels, "
            f"kernel dims {w.dims} expects {in_c}"
        )
    if b.size != out_c:
        raise ShapeError(
            f"conv2d bias size {b.size} does not match kernel out channels {out_c}"
        )
    n, _, h, wd = x.dims
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{wd + 2 * padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    s0, s1, s2, s3 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, in_c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    out = np.tensordot(w.data, cols, axes=([1, 2, 3], [1, 2, 3]))  # (out_c, n, oh, ow)
    out = out.transpose(1, 0, 2, 3) + b.data.reshape(1, out_c, 1, 1)
    r = Tensor(out)

    if tape is not None:
        def backward(g):
            db = g.sum(axis=(0, 2, 3)).reshape(b.dims)
            dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                        np.einsum("nohw,oc->nchw", g, w.data[:, :, i, j])
                    )
            if padding:
                dx = dxp[:, :, padding : padding + h, padding : padding + wd]
            else:
                dx = dxp
            return dx, dw, db

        tape.record(r, (x, w, b), backward)
    return r


def pool_channels(x: Tensor, mode: str = "median", tape: Tape | None = None) -> Tensor:
    """Collapse the channel axis to one channel per spatial position.

    median: per-position channel median; an even channel count takes the
    arithmetic mean of the two middle order statistics. Its gradient routes
    to the selected channel (split 0.5/0.5 for even counts; a tie keeps the
    lowest channel index via a stable sort). avg and max behave as usual,
    max routing to the first maximal channel.
    """
    if mode not in ("median", "avg", "max"):
        raise ConfigError(f"pool_channels mode must be median|avg|max, got {mode!r}")
    c = x.c
    if mode == "median":
        ranked = np.sort(x.data, axis=1)
        if c % 2:
            mid_val = ranked[:, c // 2 : c // 2 + 1]
            out = mid_val.copy()
            # route to the lowest channel index holding the median value
            sel = np.argmax(x.data == mid_val, axis=1, keepdims=True)

            def backward(g):
                dx = np.zeros_like(x.data)
                np.put_along_axis(dx, sel, g, axis=1)
                return (dx,)
        else:
            lo_val = ranked[:, c // 2 - 1 : c // 2]
            hi_val = ranked[:, c // 2 : c // 2 + 1]
            out = 0.5 * (lo_val + hi_val)
            # half the gradient to each middle order statistic; duplicates
            # resolve to the lowest channel indices holding those values
            mask_lo = x.data == lo_val
            sel_lo = np.argmax(mask_lo, axis=1, keepdims=True)
            count = np.cumsum(mask_lo, axis=1)
            second = np.argmax((count == 2) & mask_lo, axis=1, keepdims=True)
            distinct = np.argmax(x.data == hi_val, axis=1, keepdims=True)
            sel_hi = np.where(lo_val == hi_val, second, distinct)

            def backward(g):
                dx = np.zeros_like(x.data)
                np.put_along_axis(dx, sel_lo, 0.5 * g, axis=1)
                np.put_along_axis(dx, sel_hi, 0.5 * g, axis=1)
                return (dx,)
    elif mode == "avg":
        out = x.data.mean(axis=1, keepdims=True)

        def backward(g):
            return (np.broadcast_to(g / c, x.dims).copy(),)
    else:
        sel = np.argmax(x.data, axis=1, keepdims=True)
        out = np.take_along_axis(x.data, sel, axis=1).copy()

        def backward(g):
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, sel, g, axis=1)
            return (dx,)

    r = Tensor(out)
    if tape is not None:
        tape.record(r, (x,), backward, name=f"pool_{mode}")
    return r


def median_pool_channels(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Per-position channel median, (n, c, h, w) -> (n, 1, h, w)."""
    return pool_channels(x, "median", tape)


def global_pool_spatial(x: Tensor, mode: str = "avg", tape: Tape | None = None) -> Tensor:
    """Collapse h and w to 1x1 by mean or max; max routes to its first argmax."""
    if mode not in ("avg", "max"):
        raise ConfigError(f"global_pool_spatial mode must be avg|max, got {mode!r}")
    n, c, h, w = x.dims
    if mode == "avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def backward(g):
            return (np.broadcast_to(g / (h * w), x.dims).copy(),)
    else:
        flat = x.data.reshape(n, c, h * w)
        sel = np.argmax(flat, axis=2, keepdims=True)
        out = np.take_along_axis(flat, sel, axis=2).reshape(n, c, 1, 1).copy()

        def backward(g):
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, sel, g.reshape(n, c, 1), axis=2)
            return (dflat.reshape(x.dims),)

    r = Tensor(out)
    if tape is not None:
        tape.record(r, (x,), backward, name=f"global_{mode}")
    return r


@lru_cache(maxsize=None)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Half-pixel-centre sampling with edge clamping; rows sum to 1 exactly
    # because the fractional offsets for the supported scales are binary
    # fractions.
    a = np.zeros((n_out, n_in))
    scale = n_out / n_in
    for o in range(n_out):
        src = (o + 0.5) / scale - 0.5
        i0 = math.floor(src)
        t = src - i0
        lo = min(max(i0, 0), n_in - 1)
        hi = min(max(i0 + 1, 0), n_in - 1)
        a[o, lo] += 1.0 - t
        a[o, hi] += t
    return a


def resize_bilinear(x: Tensor, scale: float, tape: Tape | None = None) -> Tensor:
    """Bilinear resize by a fixed scale from {1/4, 1/2, 2, 4}.

    Sampling uses half-pixel centres with edge clamping, so a constant
    image stays constant and a downscale-then-upscale of a constant is the
    identity.
    """
    if not any(math.isclose(scale, s) for s in RESIZE_SCALES):
        raise ConfigError(f"resize scale must be one of {RESIZE_SCALES}, got {scale!r}")
    n, c, h, w = x.dims
    oh_f, ow_f = h * scale, w * scale
    oh, ow = int(round(oh_f)), int(round(ow_f))
    if not (math.isclose(oh, oh_f) and math.isclose(ow, ow_f)):
        raise ShapeError(f"resize by {scale} of dims {x.dims} gives non-integer size")
    if oh < 1 or ow < 1:
        raise ShapeError(f"resize by {scale} of dims {x.dims} collapses below 1x1")
    ah = _interp_matrix(h, oh).astype(x.dtype, copy=False)
    aw = _interp_matrix(w, ow).astype(x.dtype, copy=False)
    tmp = np.tensordot(x.data, aw, axes=([3], [1]))        # (n, c, h, ow)
    out = np.tensordot(tmp, ah, axes=([2], [1]))           # (n, c, ow, oh)
    out = out.transpose(0, 1, 3, 2).copy()
    r = Tensor(out)

    if tape is not None:
        def backward(g):
            t1 = np.tensordot(g, aw, axes=([3], [0]))      # (n, c, oh, w)
            dx = np.tensordot(t1, ah, axes=([2], [0]))     # (n, c, w, h)
            return (dx.transpose(0, 1, 3, 2).copy(),)

        tape.record(r, (x,), backward)
    return r


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    for da, db in zip(a.dims, b.dims):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{opname}: dims {a.dims} and {b.dims} do not broadcast")
    return tuple(max(da, db) for da, db in zip(a.dims, b.dims))


def _unbroadcast(g: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i in range(4) if dims[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum; either operand may have singleton axes broadcast."""
    _check_broadcast(x, y, "add")
    r = Tensor(x.data + y.data)
    if tape is not None:
        def backward(g):
            return _unbroadcast(g, x.dims), _unbroadcast(g, y.dims)

        tape.record(r, (x, y), backward)
    return r


def mul(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise product; either operand may have singleton axes broadcast."""
    _check_broadcast(x, y, "mul")
    r = Tensor(x.data * y.data)
    if tape is not None:
        def backward(g):
            return (
                _unbroadcast(g * y.data, x.dims),
                _unbroadcast(g * x.data, y.dims),
            )

        tape.record(r, (x, y), backward)
    return r


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    r = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        mask = x.data > 0.0

        def backward(g):
            return (g * mask,)

        tape.record(r, (x,), backward, name="relu")
    return r


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    # split by sign to stay overflow-free for large |x|
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    r = Tensor(out)
    if tape is not None:
        def backward(g):
            return (g * out * (1.0 - out),)

        tape.record(r, (x,), backward)
    return r


def clamp01(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Clip into [0, 1]; gradient passes where the input already lies inside."""
    r = Tensor(np.clip(x.data, 0.0, 1.0))
    if tape is not None:
        mask = (x.data >= 0.0) & (x.data <= 1.0)

        def backward(g):
            return (g * mask,)

        tape.record(r, (x,), backward, name="clamp01")
    return r


def softmax_over_branches(
    xs: Sequence[Tensor], tape: Tape | None = None
) -> list[Tensor]:
    """Softmax across a list of same-dims tensors, per element.

    The returned weights sum to 1 across the list at every (n, c, h, w)
    position.
    """
    if len(xs) < 2:
        raise ShapeError("softmax_over_branches needs at least two branches")
    dims = xs[0].dims
    for t in xs[1:]:
        if t.dims != dims:
            raise ShapeError(
                f"softmax_over_branches dims differ: {dims} vs {t.dims}"
            )
    z = np.stack([t.data for t in xs])
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    wgt = e / e.sum(axis=0, keepdims=True)
    outs = [Tensor(wgt[i].copy()) for i in range(len(xs))]

    if tape is not None:
        def backward(*gs):
            gstack = np.stack(gs)
            inner = (gstack * wgt).sum(axis=0, keepdims=True)
            dz = wgt * (gstack - inner)
            return tuple(dz[i] for i in range(len(xs)))

        tape.record(outs, tuple(xs), backward)
    return outs


def concat_channels(xs: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Concatenate along the channel axis; n, h, w must agree."""
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    first = xs[0]
    for t in xs[1:]:
        if (t.n, t.h, t.w) != (first.n, first.h, first.w):
            raise ShapeError(
                f"concat_channels dims differ outside channel axis: "
                f"{first.dims} vs {t.dims}"
            )
    r = Tensor(np.concatenate([t.data for t in xs], axis=1))
    if tape is not None:
        splits = np.cumsum([t.c for t in xs])[:-1]

        def backward(g):
            return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

        tape.record(r, tuple(xs), backward)
    return r


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum every element into a (1, 1, 1, 1) scalar tensor."""
    r = Tensor(x.data.sum(dtype=x.dtype).reshape(1, 1, 1, 1))
    if tape is not None:
        def backward(g):
            return (np.broadcast_to(g, x.dims).copy(),)

        tape.record(r, (x,), backward)
    return r


# ---------------------------------------------------------------------------
# finite-difference checking


def _as_list(x) -> list[Tensor]:
    return [x] if isinstance(x, Tensor) else list(x)


def _loss_value(f, xs: list[Tensor], proj: np.ndarray) -> float:
    out = f(*xs, tape=None)
    return float((out.data * proj).sum())


def grad_check(f, x, eps: float = 1e-5, rng=None) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f(*tensors, tape=...)`` maps one or more tensors to a tensor. Every
    element of every given tensor is perturbed by +-eps; the scalar under
    test is the projection of f's output onto a fixed random direction, so
    each output element influences it. Relative error per element is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    xs = _as_list(x)
    rng = np.random.default_rng(0) if rng is None else rng

    tape = Tape()
    out = f(*xs, tape=tape)
    proj = rng.standard_normal(out.dims)
    loss = sum_all(mul(out, Tensor(proj), tape), tape)
    tape.backward(loss)
    analytic = [
        tape.grad(t) if tape.grad(t) is not None else np.zeros_like(t.data)
        for t in xs
    ]

    worst = 0.0
    for t, an in zip(xs, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = _loss_value(f, xs, proj)
            flat[i] = keep - eps
            down = _loss_value(f, xs, proj)
            flat[i] = keep
            num = (up - down) / (2.0 * eps)
            err = abs(an_flat[i] - num) / max(1.0, abs(an_flat[i]), abs(num))
            worst = max(worst, err)
    return worst


def grad_check_directional(
    f, x, eps: float = 1e-5, n_probes: int = 4, rng=None
) -> float:
    """Finite-difference check along random directions (Jacobian-vector probes).

    Cheaper than the element-wise sweep for large parameter sets: each probe
    compares the analytic directional derivative sum(grad . v) with a
    central difference of the projected scalar along v.
    """
    xs = _as_list(x)
    rng = np.random.default_rng(0) if rng is None else rng

    tape = Tape()
    out = f(*xs, tape=tape)
    proj = rng.standard_normal(out.dims)
    loss = sum_all(mul(out, Tensor(proj), tape), tape)
    tape.backward(loss)
    analytic = [
        tape.grad(t) if tape.grad(t) is not None else np.zeros_like(t.data)
        for t in xs
    ]

    worst = 0.0
    for _ in range(n_probes):
        vs = [rng.standard_normal(t.dims) for t in xs]
        norm = math.sqrt(sum(float((v * v).sum()) for v in vs))
        vs = [v / norm for v in vs]
        an = sum(float((a * v).sum()) for a, v in zip(analytic, vs))
        saved = [t.data.copy() for t in xs]
        for t, v in zip(xs, vs):
            t.data += eps * v
        up = _loss_value(f, xs, proj)
        for t, s, v in zip(xs, saved, vs):
            t.data[...] = s - eps * v
        down = _loss_value(f, xs, proj)
        for t, s in zip(xs, saved):
            t.data[...] = s
        num = (up - down) / (2.0 * eps)
        err = abs(an - num) / max(1.0, abs(an), abs(num))
        worst = max(worst, err)
    return worst


def sample_without_channel_ties(
    rng, dims: tuple[int, int, int, int], min_gap: float, low: float = -1.0, high: float = 1.0
) -> np.ndarray:
    """Uniform sample whose channel values are pairwise separated per position.

    Keeps order-statistic selections (median, max over channels) stable
    under +-eps perturbation during finite-difference checks.
    """
    for _ in range(200):
        x = rng.uniform(low, high, dims)
        if dims[1] == 1:
            return x
        ranked = np.sort(x, axis=1)
        if np.diff(ranked, axis=1).min() > min_gap:
            return x
    raise RuntimeError("could not sample a tie-free tensor; widen the range")


def min_kink_distance(tape: Tape) -> float:
    """Smallest margin any recorded op leaves before its gradient switches.

    relu and clamp01 contribute the distance of their inputs to the clip
    boundaries; median/max pools contribute the gap between the order
    statistics adjacent to the selected one. Smooth ops contribute nothing.
    Finite differencing is only trustworthy when this exceeds the step: a
    kink inside the probe interval biases the numeric slope by up to the
    full jump, not O(eps).
    """
    worst = math.inf
    for _, ins, _, name in tape._records:
        if not name:
            continue
        x = ins[0].data
        if name == "relu":
            worst = min(worst, float(np.abs(x).min()))
        elif name == "clamp01":
            worst = min(worst, float(np.abs(x).min()), float(np.abs(x - 1.0).min()))
        elif name == "pool_median" and x.shape[1] > 2:
            # only gaps adjacent to the middle rank(s) can reroute the
            # gradient; for even c the two middle elements swapping changes
            # nothing (their mean and the 0.5/0.5 split are symmetric)
            c = x.shape[1]
            gaps = np.diff(np.sort(x, axis=1), axis=1)
            m = c // 2
            idx = (m - 1, m) if c % 2 else (m - 2, m)
            for i in idx:
                if 0 <= i < c - 1:
                    worst = min(worst, float(gaps[:, i].min()))
        elif name == "pool_max" and x.shape[1] > 1:
            gaps = np.diff(np.sort(x, axis=1), axis=1)
            worst = min(worst, float(gaps[:, -1].min()))
        elif name == "global_max":
            n, c, h, w = x.shape
            if h * w > 1:
                ranked = np.sort(x.reshape(n, c, h * w), axis=2)
                worst = min(worst, float((ranked[:, :, -1] - ranked[:, :, -2]).min()))
    return worst


def draw_kink_free(f, draw, rng, min_gap: float, max_tries: int = 50) -> list[Tensor]:
    """Redraw ``draw(rng)`` until ``f`` evaluates clear of gradient kinks.

    ``draw`` returns the tensor list that ``f(*tensors, tape=...)`` consumes.
    Returns the first draw whose min_kink_distance exceeds ``min_gap``, so a
    subsequent finite-difference check with step below ``min_gap`` never
    straddles a relu/clamp corner or an order-statistic tie.
    """
    for _ in range(max_tries):
        xs = _as_list(draw(rng))
        tape = Tape()
        f(*xs, tape=tape)
        if min_kink_distance(tape) > min_gap:
            return xs
    raise RuntimeError(
        f"no kink-free sample after {max_tries} draws; shrink min_gap ({min_gap})"
    )
