"""Low-light enhancer network built from taped engine primitives.

The network is a residual multi-scale design: parallel streams at halved
resolutions and doubled widths, dual-attention units on each stream, and
selective fusion blocks that mix the streams at every resolution. The
spatial attention inside each dual-attention unit gates on the per-position
channel median, which shrugs off single-channel outliers.

Parameters live in a flat, ordered path -> Tensor map so that
initialisation, optimisation and checkpointing never depend on the block
structure.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .engine import (
    ConfigError,
    ShapeError,
    Tape,
    Tensor,
    add,
    clamp01,
    concat_channels,
    conv2d,
    global_pool_spatial,
    mul,
    pool_channels,
    relu,
    resize_bilinear,
    sigmoid,
    softmax_over_branches,
)

__all__ = [
    "NetConfig",
    "ModelParams",
    "ResolutionError",
    "CheckpointError",
    "channel_attention",
    "spatial_attention",
    "dau",
    "skff",
    "mrb",
    "forward",
    "init_model",
    "save_checkpoint",
    "load_checkpoint",
    "pad_to_multiple",
    "crop_back",
]

CHECKPOINT_MAGIC = b"SGLTCKPT"
CHECKPOINT_VERSION = 1

_SPATIAL_POOLS = ("median", "avgmax")


class ResolutionError(ShapeError):
    """Input height or width is not divisible by the stream divisor."""


class CheckpointError(ValueError):
    """Checkpoint bytes do not follow the expected layout."""


@dataclass(frozen=True)
class NetConfig:
    """Hyperparameters fixing the network topology.

    Defaults give the full-size model; ``NetConfig.small()`` is the
    test-scale variant used throughout the test suite. ``ca_reduction`` is
    the bottleneck ratio shared by the channel-attention and fusion blocks.
    ``spatial_pool`` selects the pooled map feeding the spatial-attention
    conv: "median" (default) or "avgmax" (comparison variant with the
    per-position channel mean and max stacked into two channels).
    """

    n_rrg: int = 3
    n_mrb_per_rrg: int = 2
    n_scales: int = 3
    base_channels: int = 64
    sa_kernel: int = 5
    ca_reduction: int = 4
    spatial_pool: str = "median"
    seed: int = 0

    def __post_init__(self):
        if self.n_rrg < 1 or self.n_mrb_per_rrg < 1 or self.n_scales < 1:
            raise ConfigError(f"counts must be >= 1, got {self}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.sa_kernel < 1 or self.sa_kernel % 2 == 0:
            raise ConfigError(f"sa_kernel must be odd, got {self.sa_kernel}")
        if self.ca_reduction < 1 or self.base_channels < self.ca_reduction:
            raise ConfigError(
                f"need base_channels >= ca_reduction >= 1, got "
                f"{self.base_channels} and {self.ca_reduction}"
            )
        if self.spatial_pool not in _SPATIAL_POOLS:
            raise ConfigError(
                f"spatial_pool must be one of {_SPATIAL_POOLS}, got {self.spatial_pool!r}"
            )

    @classmethod
    def small(cls, **overrides) -> "NetConfig":
        """Test-scale topology: one group, one block, two streams, 8 channels."""
        base = dict(n_rrg=1, n_mrb_per_rrg=1, n_scales=2, base_channels=8)
        base.update(overrides)
        return cls(**base)

    @property
    def divisor(self) -> int:
        """Input height/width must be divisible by this (2 ** (n_scales - 1))."""
        return 1 << (self.n_scales - 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls(**json.loads(text))


class ModelParams:
    """Flat, ordered map of parameter path -> Tensor, plus its NetConfig.

    Paths are slash-separated and unique; insertion order is the canonical
    structural order and is preserved by checkpoints.
    """

    def __init__(self, config: NetConfig):
        self.config = config
        self._tensors: dict[str, Tensor] = {}

    def add(self, path: str, tensor: Tensor) -> None:
        if path in self._tensors:
            raise ConfigError(f"duplicate parameter path {path!r}")
        self._tensors[path] = tensor

    def __getitem__(self, path: str) -> Tensor:
        return self._tensors[path]

    def __contains__(self, path: str) -> bool:
        return path in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def paths(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    @property
    def n_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config)
        for path, t in self.items():
            out.add(path, t.copy())
        return out

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams(self.config)
        for path, t in self.items():
            out.add(path, t.astype(dtype))
        return out


# ---------------------------------------------------------------------------
# blocks


def _conv(x, params, path, stride=1, padding=0, tape=None):
    return conv2d(x, params[path + "/w"], params[path + "/b"],
                  stride=stride, padding=padding, tape=tape)


def channel_attention(x: Tensor, params: ModelParams, prefix: str, tape: Tape | None = None) -> Tensor:
    """Gate each channel by a squeeze-excite factor in (0, 1).

    g = sigmoid(conv2(relu(conv1(gap(x))))), returned as x * g with g
    broadcast over the spatial axes.
    """
    s = global_pool_spatial(x, "avg", tape)
    s = conv2d(s, params[prefix + "/conv1/w"], params[prefix + "/conv1/b"], tape=tape)
    s = relu(s, tape)
    s = conv2d(s, params[prefix + "/conv2/w"], params[prefix + "/conv2/b"], tape=tape)
    g = sigmoid(s, tape)
    return mul(x, g, tape)


def spatial_attention(x: Tensor, params: ModelParams, prefix: str,
                      pool: str = "median", tape: Tape | None = None) -> Tensor:
    """Gate each spatial position by an attention map in (0, 1).

    The map comes from a conv over the per-position channel median (or, in
    the "avgmax" comparison variant, over the stacked channel mean and max),
    then a sigmoid; it is broadcast across channels.
    """
    if pool == "median":
        m = pool_channels(x, "median", tape)
    elif pool == "avgmax":
        m = concat_channels(
            [pool_channels(x, "avg", tape), pool_channels(x, "max", tape)], tape
        )
    else:
        raise ConfigError(f"spatial_attention pool must be median|avgmax, got {pool!r}")
    k = params[prefix + "/conv/w"].dims[2]
    a = conv2d(m, params[prefix + "/conv/w"], params[prefix + "/conv/b"],
               padding=(k - 1) // 2, tape=tape)
    a = sigmoid(a, tape)
    return mul(x, a, tape)


def dau(x: Tensor, params: ModelParams, prefix: str,
        pool: str = "median", tape: Tape | None = None) -> Tensor:
    """Dual-attention unit: residual conv features gated two ways.

    f = conv2(relu(conv1(x))); channel and spatial attention run on f in
    parallel, their outputs are concatenated and projected back to the
    input width by a 1x1 conv, and the result is added to x. Zeroing the
    projection conv makes the unit an exact identity.
    """
    f = _conv(x, params, prefix + "/conv1", padding=1, tape=tape)
    f = relu(f, tape)
    f = _conv(f, params, prefix + "/conv2", padding=1, tape=tape)
    ca = channel_attention(f, params, prefix + "/ca", tape)
    sa = spatial_attention(f, params, prefix + "/sa", pool, tape)
    u = concat_channels([ca, sa], tape)
    p = _conv(u, params, prefix + "/proj", tape=tape)
    return add(x, p, tape)


def skff(branches: Sequence[Tensor], params: ModelParams, prefix: str,
         tape: Tape | None = None) -> Tensor:
    """Fuse same-dims branches by learned convex per-channel weights.

    A global descriptor of the summed branches is squeezed through a 1x1
    conv, then one selector conv per branch produces logits; a softmax
    across branches yields weights that sum to 1 at every channel, and the
    output is the weighted sum of the branches.
    """
    weights = _skff_weights(branches, params, prefix, tape)
    out = mul(branches[0], weights[0], tape)
    for t, w in zip(branches[1:], weights[1:]):
        out = add(out, mul(t, w, tape), tape)
    return out


def _skff_weights(branches: Sequence[Tensor], params: ModelParams, prefix: str,
                  tape: Tape | None = None) -> list[Tensor]:
    """The convex per-channel fusion weights, one (n, c, 1, 1) per branch."""
    if len(branches) < 2:
        raise ShapeError("skff needs at least two branches")
    dims = branches[0].dims
    for t in branches[1:]:
        if t.dims != dims:
            raise ShapeError(f"skff branch dims differ: {dims} vs {t.dims}")
    total = branches[0]
    for t in branches[1:]:
        total = add(total, t, tape)
    s = global_pool_spatial(total, "avg", tape)
    z = _conv(s, params, prefix + "/fuse", tape=tape)
    z = relu(z, tape)
    logits = [
        _conv(z, params, f"{prefix}/select{i}", tape=tape)
        for i in range(len(branches))
    ]
    return softmax_over_branches(logits, tape)


def _resample_step(x, params, path, scale, tape):
    return _conv(resize_bilinear(x, scale, tape), params, path, tape=tape)


def mrb(x: Tensor, params: ModelParams, prefix: str, n_scales: int,
        pool: str = "median", tape: Tape | None = None) -> Tensor:
    """Multi-scale residual block over ``n_scales`` parallel streams.

    Stream i runs at 1/2**i resolution with base_channels * 2**i channels,
    built by an entry chain of bilinear-halve + 1x1 conv steps. Each stream
    passes a DAU, every resolution fuses all streams (resampled to it) with
    one SKFF, each stream passes a second DAU, the lower streams are
    brought back to full resolution by exit chains, a final SKFF fuses
    them, and a 3x3 conv feeds the residual add. n_scales == 1 degenerates
    to x + conv(dau(dau(x))).
    """
    div = 1 << (n_scales - 1)
    if x.h % div or x.w % div:
        raise ResolutionError(
            f"mrb input dims {x.dims} not divisible by stream divisor {div}"
        )

    streams = [x]
    for k in range(1, n_scales):
        streams.append(
            _resample_step(streams[-1], params, f"{prefix}/entry/down{k}", 0.5, tape)
        )

    d1 = [
        dau(streams[i], params, f"{prefix}/s{i}/dau1", pool, tape)
        for i in range(n_scales)
    ]

    if n_scales == 1:
        fused = d1
    else:
        fused = []
        for t in range(n_scales):
            branches = []
            for i in range(n_scales):
                b = d1[i]
                scale = 0.5 if i < t else 2.0
                for k in range(abs(t - i)):
                    b = _resample_step(
                        b, params, f"{prefix}/cross1/s{i}_to_s{t}/step{k}", scale, tape
                    )
                branches.append(b)
            fused.append(skff(branches, params, f"{prefix}/skff1/s{t}", tape))

    d2 = [
        dau(fused[i], params, f"{prefix}/s{i}/dau2", pool, tape)
        for i in range(n_scales)
    ]

    if n_scales == 1:
        tail = d2[0]
    else:
        lifted = [d2[0]]
        for i in range(1, n_scales):
            b = d2[i]
            for k in range(i):
                b = _resample_step(b, params, f"{prefix}/exit/s{i}/step{k}", 2.0, tape)
            lifted.append(b)
        tail = skff(lifted, params, f"{prefix}/skff_out", tape)

    out = _conv(tail, params, prefix + "/conv_out", padding=1, tape=tape)
    return add(x, out, tape)


def forward(image: Tensor, params: ModelParams, tape: Tape | None = None) -> Tensor:
    """Enhance a batch of images in [0, 1].

    features = conv_in(image) pass through groups of MRBs, each group
    closed by a tail conv and a residual add; a final conv maps back to
    three channels and the result is clamp(image + residual, 0, 1).
    """
    cfg = params.config
    if image.c != 3:
        raise ShapeError(f"forward expects 3-channel input, got dims {image.dims}")
    if image.h % cfg.divisor or image.w % cfg.divisor:
        raise ResolutionError(
            f"input dims {image.dims} not divisible by stream divisor {cfg.divisor} "
            f"(n_scales={cfg.n_scales})"
        )
    lo, hi = float(image.data.min()), float(image.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"input values must lie in [0, 1], got [{lo}, {hi}]")

    feat = _conv(image, params, "conv_in", padding=1, tape=tape)
    for g in range(cfg.n_rrg):
        group_in = feat
        for m in range(cfg.n_mrb_per_rrg):
            feat = mrb(feat, params, f"rrg{g}/mrb{m}", cfg.n_scales,
                       cfg.spatial_pool, tape)
        feat = _conv(feat, params, f"rrg{g}/conv", padding=1, tape=tape)
        feat = add(group_in, feat, tape)
    residual = _conv(feat, params, "conv_out", padding=1, tape=tape)
    return clamp01(add(image, residual, tape), tape)


# ---------------------------------------------------------------------------
# construction


def _dau_conv_specs(prefix: str, c: int, reduction: int, sa_kernel: int,
                    sa_in: int) -> list[tuple[str, int, int, int]]:
    cr = max(c // reduction, 1)
    return [
        (prefix + "/conv1", c, c, 3),
        (prefix + "/conv2", c, c, 3),
        (prefix + "/ca/conv1", cr, c, 1),
        (prefix + "/ca/conv2", c, cr, 1),
        (prefix + "/sa/conv", 1, sa_in, sa_kernel),
        (prefix + "/proj", c, 2 * c, 1),
    ]


def _skff_conv_specs(prefix: str, c: int, reduction: int,
                     n_branches: int) -> list[tuple[str, int, int, int]]:
    cr = max(c // reduction, 1)
    specs = [(prefix + "/fuse", cr, c, 1)]
    specs += [(f"{prefix}/select{i}", c, cr, 1) for i in range(n_branches)]
    return specs


def _conv_specs(cfg: NetConfig) -> list[tuple[str, int, int, int]]:
    """Every conv in the model as (path, out_c, in_c, kernel), in canonical order."""
    c0 = cfg.base_channels
    s = cfg.n_scales
    r = cfg.ca_reduction
    sa_in = 1 if cfg.spatial_pool == "median" else 2
    width = lambda i: c0 * (1 << i)

    specs: list[tuple[str, int, int, int]] = [("conv_in", c0, 3, 3)]
    for g in range(cfg.n_rrg):
        for m in range(cfg.n_mrb_per_rrg):
            p = f"rrg{g}/mrb{m}"
            for k in range(1, s):
                specs.append((f"{p}/entry/down{k}", width(k), width(k - 1), 1))
            for i in range(s):
                specs += _dau_conv_specs(f"{p}/s{i}/dau1", width(i), r,
                                         cfg.sa_kernel, sa_in)
            if s > 1:
                for t in range(s):
                    for i in range(s):
                        if i == t:
                            continue
                        step = 1 if i < t else -1
                        for k in range(abs(t - i)):
                            lvl = i + step * k
                            specs.append((
                                f"{p}/cross1/s{i}_to_s{t}/step{k}",
                                width(lvl + step), width(lvl), 1,
                            ))
                    specs += _skff_conv_specs(f"{p}/skff1/s{t}", width(t), r, s)
            for i in range(s):
                specs += _dau_conv_specs(f"{p}/s{i}/dau2", width(i), r,
                                         cfg.sa_kernel, sa_in)
            if s > 1:
                for i in range(1, s):
                    for k in range(i):
                        specs.append((
                            f"{p}/exit/s{i}/step{k}",
                            width(i - k - 1), width(i - k), 1,
                        ))
                specs += _skff_conv_specs(f"{p}/skff_out", c0, r, s)
            specs.append((f"{p}/conv_out", c0, c0, 3))
        specs.append((f"rrg{g}/conv", c0, c0, 3))
    specs.append(("conv_out", 3, c0, 3))
    return specs


def _param_rng(seed: int, path: str) -> np.random.Generator:
    # Counter-based stream per path: bit-reproducible for a given
    # (seed, path) no matter in which order parameters are created.
    digest = hashlib.sha256(path.encode()).digest()
    counter = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=counter))


def init_model(config: NetConfig) -> ModelParams:
    """Deterministic fan-in-scaled uniform init; biases start at zero.

    Weight bound is 1/sqrt(in_c * k * k). Two calls with equal (config,
    seed) produce bit-identical parameters.
    """
    params = ModelParams(config)
    for path, out_c, in_c, k in _conv_specs(config):
        bound = 1.0 / np.sqrt(in_c * k * k)
        rng = _param_rng(config.seed, path + "/w")
        params.add(path + "/w", Tensor(rng.uniform(-bound, bound, (out_c, in_c, k, k))))
        params.add(path + "/b", Tensor.zeros((1, out_c, 1, 1)))
    return params


# ---------------------------------------------------------------------------
# checkpoints

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write magic, version, config and (path, dims, values) records.

    Values are stored little-endian at their native precision; a
    save/load/save round trip is byte-identical.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    dtypes = {t.dtype for _, t in params.items()}
    dtype = dtypes.pop() if len(dtypes) == 1 else np.dtype(np.float64)
    buf.write(struct.pack("<B", _DTYPE_CODES[np.dtype(dtype)]))
    cfg = params.config.to_json().encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params)))
    for ppath, t in params.items():
        enc = ppath.encode()
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<4I", *t.dims))
        buf.write(np.ascontiguousarray(t.data, dtype=dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint back into a ModelParams with its NetConfig."""
    raw = Path(path).read_bytes()
    view = io.BytesIO(raw)

    def take(n: int, what: str) -> bytes:
        b = view.read(n)
        if len(b) != n:
            raise CheckpointError(
                f"checkpoint truncated reading {what} at byte {view.tell() - len(b)}"
            )
        return b

    if take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (code,) = struct.unpack("<B", take(1, "dtype"))
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    config = NetConfig.from_json(take(cfg_len, "config").decode())
    (count,) = struct.unpack("<I", take(4, "record count"))
    params = ModelParams(config)
    for _ in range(count):
        (plen,) = struct.unpack("<H", take(2, "path length"))
        ppath = take(plen, "path").decode()
        dims = struct.unpack("<4I", take(16, "dims"))
        nbytes = int(np.prod(dims)) * dtype.itemsize
        values = np.frombuffer(take(nbytes, f"values of {ppath}"), dtype=dtype)
        params.add(ppath, Tensor(values.reshape(dims).astype(dtype.newbyteorder("="))))
    if view.read(1):
        raise CheckpointError(f"trailing bytes after {count} records in {path}")
    return params


# ---------------------------------------------------------------------------
# framing helpers


def pad_to_multiple(image: Tensor, divisor: int) -> tuple[Tensor, tuple[int, int, int, int]]:
    """Reflect-pad h and w up to multiples of ``divisor``, split evenly.

    Returns the padded tensor and (top, left, h, w) needed by crop_back.
    """
    h, w = image.h, image.w
    ph = (-h) % divisor
    pw = (-w) % divisor
    if not ph and not pw:
        return image, (0, 0, h, w)
    top, left = ph // 2, pw // 2
    mode = "reflect" if min(h, w) > 1 else "edge"
    padded = np.pad(
        image.data,
        ((0, 0), (0, 0), (top, ph - top), (left, pw - left)),
        mode=mode,
    )
    return Tensor(padded), (top, left, h, w)


def crop_back(image: Tensor, frame: tuple[int, int, int, int]) -> Tensor:
    """Undo pad_to_multiple given its returned frame."""
    top, left, h, w = frame
    if image.h == h and image.w == w and not top and not left:
        return image
    return Tensor(image.data[:, :, top : top + h, left : left + w].copy())
