"""Small numpy neural-network engine with exact backward passes.

Networks are flat chains of layer specs evaluated over channel-last
arrays. The engine covers exactly what the scalar Q-value heads need:
valid-padding convolutions, batch normalization, ReLU, dense layers, an
auxiliary-feature concatenation point, and the ADAM optimizer. Backward
passes are derived by hand per layer and checked against central finite
differences in the test suite.

Tensors are plain numpy ndarrays. A sample is either an (h, w, c)
feature map or a flat (f,) vector; batches stack samples along a
leading axis and single samples are accepted anywhere a batch is. Every
layer boundary rejects NaN/Inf.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BN_MOMENTUM = 0.99
BN_EPS = 1e-5

CHECKPOINT_MAGIC = b"DQPLNNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    """2-d convolution, valid padding, channel-last weights."""

    filters: int
    kernel_h: int
    kernel_w: int
    stride: int = 1


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class BatchNorm:
    channels: int


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Concat:
    """Append an auxiliary feature vector to the flat features."""

    units: int


LayerSpec = Conv | Dense | BatchNorm | Activation | Flatten | Concat


def q_network() -> tuple[LayerSpec, ...]:
    """Layer chain of the scalar Q head over (30, 30, 7) encodings.

    Batch normalization precedes every parameterized layer except the
    output; each normalized conv/dense block is followed by ReLU; the
    output stays linear so Q-values may take either sign.
    """
    return (
        BatchNorm(7),
        Conv(32, 4, 4, 2),
        Activation("relu"),
        BatchNorm(32),
        Conv(64, 4, 4, 2),
        Activation("relu"),
        BatchNorm(64),
        Conv(64, 3, 3, 1),
        Activation("relu"),
        Flatten(),
        BatchNorm(1024),
        Dense(128),
        Activation("relu"),
        Dense(1),
    )


def dql_network(aux_units: int = 9) -> tuple[LayerSpec, ...]:
    """Q(s, a) chain: the same trunk plus an auxiliary input.

    The orientation/action one-hots enter after the flattened conv
    features are normalized, so the indicator columns are passed
    through unscaled.
    """
    return (
        BatchNorm(7),
        Conv(32, 4, 4, 2),
        Activation("relu"),
        BatchNorm(32),
        Conv(64, 4, 4, 2),
        Activation("relu"),
        BatchNorm(64),
        Conv(64, 3, 3, 1),
        Activation("relu"),
        Flatten(),
        BatchNorm(1024),
        Concat(aux_units),
        Dense(128),
        Activation("relu"),
        Dense(1),
    )


def chain_shapes(
    specs: tuple[LayerSpec, ...], in_shape: tuple[int, ...]
) -> list[tuple[int, ...]]:
    """Sample shapes before/after each layer (no batch axis).

    Validates the whole chain; raises ValueError on any layer that
    cannot consume its input shape.
    """
    shapes = [tuple(int(d) for d in in_shape)]
    concats = 0
    for i, spec in enumerate(specs):
        cur = shapes[-1]
        if any(d <= 0 for d in cur):
            raise ValueError(f"layer {i}: non-positive input shape {cur}")
        if isinstance(spec, Conv):
            if spec.filters <= 0 or spec.kernel_h <= 0 or spec.kernel_w <= 0:
                raise ValueError(f"layer {i}: conv dimensions must be positive")
            if spec.stride < 1:
                raise ValueError(f"layer {i}: conv stride must be >= 1")
            if len(cur) != 3:
                raise ValueError(f"layer {i}: conv needs an (h, w, c) input, got {cur}")
            h, w, _ = cur
            if spec.kernel_h > h or spec.kernel_w > w:
                raise ValueError(f"layer {i}: kernel exceeds input {cur}")
            out = (
                (h - spec.kernel_h) // spec.stride + 1,
                (w - spec.kernel_w) // spec.stride + 1,
                spec.filters,
            )
        elif isinstance(spec, Dense):
            if spec.units <= 0:
                raise ValueError(f"layer {i}: dense units must be positive")
            if len(cur) != 1:
                raise ValueError(f"layer {i}: dense needs a flat input, got {cur}")
            out = (spec.units,)
        elif isinstance(spec, BatchNorm):
            if spec.channels != cur[-1]:
                raise ValueError(
                    f"layer {i}: batch-norm over {spec.channels} channels "
                    f"cannot consume {cur}"
                )
            out = cur
        elif isinstance(spec, Activation):
            if spec.kind != "relu":
                raise ValueError(f"layer {i}: unknown activation kind {spec.kind!r}")
            out = cur
        elif isinstance(spec, Flatten):
            if len(cur) != 3:
                raise ValueError(f"layer {i}: flatten needs an (h, w, c) input")
            out = (cur[0] * cur[1] * cur[2],)
        elif isinstance(spec, Concat):
            concats += 1
            if concats > 1:
                raise ValueError("at most one concat layer per chain")
            if spec.units <= 0:
                raise ValueError(f"layer {i}: concat units must be positive")
            if len(cur) != 1:
                raise ValueError(f"layer {i}: concat needs a flat input, got {cur}")
            out = (cur[0] + spec.units,)
        else:
            raise ValueError(f"layer {i}: unknown layer spec {spec!r}")
        shapes.append(out)
    return shapes


def init_params(
    specs: tuple[LayerSpec, ...],
    in_shape: tuple[int, ...],
    seed: int,
    dtype=np.float32,
) -> list[dict[str, np.ndarray]]:
    """Seeded He-uniform fan-in weights; zero biases; identity batch norm.

    Returns one parameter block per layer spec (empty for layers without
    parameters). Batch-norm blocks carry running statistics under
    "mean"/"var"; those are state, not trainables.
    """
    rng = np.random.default_rng(seed)
    shapes = chain_shapes(specs, in_shape)
    params: list[dict[str, np.ndarray]] = []
    for spec, shape_in in zip(specs, shapes[:-1]):
        if isinstance(spec, Conv):
            fan_in = spec.kernel_h * spec.kernel_w * shape_in[-1]
            limit = math.sqrt(6.0 / fan_in)
            shape = (spec.kernel_h, spec.kernel_w, shape_in[-1], spec.filters)
            params.append(
                {
                    "w": rng.uniform(-limit, limit, shape).astype(dtype),
                    "b": np.zeros(spec.filters, dtype),
                }
            )
        elif isinstance(spec, Dense):
            limit = math.sqrt(6.0 / shape_in[0])
            params.append(
                {
                    "w": rng.uniform(-limit, limit, (shape_in[0], spec.units)).astype(
                        dtype
                    ),
                    "b": np.zeros(spec.units, dtype),
                }
            )
        elif isinstance(spec, BatchNorm):
            params.append(
                {
                    "scale": np.ones(spec.channels, dtype),
                    "shift": np.zeros(spec.channels, dtype),
                    "mean": np.zeros(spec.channels, dtype),
                    "var": np.ones(spec.channels, dtype),
                }
            )
        else:
            params.append({})
    return params


# Keys updated by the optimizer; batch-norm running stats are excluded.
_TRAINABLE_KEYS = ("w", "b", "scale", "shift")


def trainable_items(params):
    """Yield (layer index, key, array) over every trainable array."""
    for i, block in enumerate(params):
        for key in _TRAINABLE_KEYS:
            if key in block:
                yield i, key, block[key]


def num_params(params) -> int:
    return sum(arr.size for _, _, arr in trainable_items(params))


def clone_params(params) -> list[dict[str, np.ndarray]]:
    """Deep copy of every array, running statistics included."""
    return [{k: a.copy() for k, a in block.items()} for block in params]


def _require_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values {where}")


def _param_dtype(params):
    for _, _, arr in trainable_items(params):
        return arr.dtype
    return None


def _sample_rank(specs) -> int | None:
    for spec in specs:
        if isinstance(spec, (Conv, Flatten)):
            return 3
        if isinstance(spec, (Dense, Concat)):
            return 1
    return None


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by backward()."""

    specs: tuple[LayerSpec, ...]
    mode: str
    squeezed: bool
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    dtype: np.dtype
    layers: list[tuple]


def forward(params, specs, x, mode: str = "train", aux=None):
    """Run the chain; returns (output, cache).

    In train mode batch-norm layers normalize with current-batch
    statistics and fold them into their running estimates (a deliberate
    in-place update of the "mean"/"var" state). In infer mode they apply
    the frozen running statistics as a per-sample affine map.

    `x` is one sample or a batch; integer inputs (e.g. uint8 encodings)
    are promoted to the parameter dtype. `aux` is required exactly when
    the chain has a Concat layer.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    specs = tuple(specs)
    if len(params) != len(specs):
        raise ValueError(
            f"{len(params)} parameter blocks do not match {len(specs)} layers"
        )
    x = np.asarray(x)
    dtype = _param_dtype(params)
    if dtype is None:
        # Parameterless chain: follow the input (promote integers).
        dtype = x.dtype if x.dtype.kind == "f" else np.dtype(np.float32)
    if x.dtype != dtype:
        x = x.astype(dtype)
    rank = _sample_rank(specs)
    if rank is None:
        # Chain of shape-preserving layers only: read the rank off the
        # input itself (1/3 = single sample, 2/4 = batch).
        rank = 1 if x.ndim in (1, 2) else 3
    if x.ndim == rank:
        squeezed = True
        x = x[None]
    elif x.ndim == rank + 1:
        squeezed = False
    else:
        raise ValueError(f"input of rank {x.ndim} does not fit the chain")
    _require_finite(x, "in the input")

    has_concat = any(isinstance(s, Concat) for s in specs)
    if has_concat and aux is None:
        raise ValueError("chain has a concat layer but no aux input was given")
    if aux is not None:
        if not has_concat:
            raise ValueError("aux input given but the chain has no concat layer")
        aux = np.asarray(aux)
        if aux.dtype != dtype:
            aux = aux.astype(dtype)
        if aux.ndim == 1:
            aux = aux[None]
        if aux.ndim != 2 or aux.shape[0] != x.shape[0]:
            raise ValueError(f"aux shape {aux.shape} does not match batch {x.shape[0]}")
        _require_finite(aux, "in the aux input")

    cache = ForwardCache(
        specs=specs,
        mode=mode,
        squeezed=squeezed,
        in_shape=x.shape,
        out_shape=(),
        dtype=dtype,
        layers=[],
    )
    cur = x
    for i, spec in enumerate(specs):
        if isinstance(spec, Conv):
            block = params[i]
            cur, layer_cache = _conv_forward(cur, block["w"], block["b"], spec.stride)
        elif isinstance(spec, Dense):
            block = params[i]
            layer_cache = ("dense", cur, block["w"])
            cur = cur @ block["w"] + block["b"]
        elif isinstance(spec, BatchNorm):
            cur, layer_cache = _bn_forward(cur, params[i], mode)
        elif isinstance(spec, Activation):
            mask = cur > 0
            layer_cache = ("relu", mask)
            cur = cur * mask
        elif isinstance(spec, Flatten):
            layer_cache = ("flatten", cur.shape)
            cur = cur.reshape(cur.shape[0], -1)
        elif isinstance(spec, Concat):
            if aux.shape[1] != spec.units:
                raise ValueError(
                    f"aux width {aux.shape[1]} does not match concat({spec.units})"
                )
            layer_cache = ("concat", cur.shape[1])
            cur = np.concatenate([cur, aux], axis=1)
        _require_finite(cur, f"after layer {i} ({type(spec).__name__.lower()})")
        cache.layers.append(layer_cache)
    cache.out_shape = cur.shape
    out = cur[0] if squeezed else cur
    return out, cache


def _conv_forward(x, w, b, stride):
    n, h, wd, cin = x.shape
    kh, kw, cin_w, f = w.shape
    if cin_w != cin:
        raise ValueError(f"conv weights expect {cin_w} channels, input has {cin}")
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (n, oh, ow, cin, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * oh * ow, kh * kw * cin
    )
    out = cols @ w.reshape(kh * kw * cin, f)
    out += b
    return out.reshape(n, oh, ow, f), ("conv", cols, w, x.shape, stride)


def _bn_forward(x, block, mode):
    axes = tuple(range(x.ndim - 1))
    scale, shift = block["scale"], block["shift"]
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv
        m = 1
        for a in axes:
            m *= x.shape[a]
        # Running stats fold in the same biased batch variance used to
        # normalize; mutated in place so the block IS the model state.
        block["mean"] *= BN_MOMENTUM
        block["mean"] += (1.0 - BN_MOMENTUM) * mean
        block["var"] *= BN_MOMENTUM
        block["var"] += (1.0 - BN_MOMENTUM) * var
        layer_cache = ("bn_train", xhat, inv, scale, axes, m)
    else:
        inv = 1.0 / np.sqrt(block["var"] + BN_EPS)
        xhat = (x - block["mean"]) * inv
        layer_cache = ("bn_infer", xhat, inv, scale, axes)
    return scale * xhat + shift, layer_cache


def backward(cache: ForwardCache, dout):
    """Exact gradients for every parameter and the input.

    `dout` holds the upstream gradient of a scalar objective with the
    shape of the forward output (a bare scalar is accepted when the
    output has a single entry). Returns (grads, dx) where grads mirrors
    the parameter blocks.
    """
    d = np.asarray(dout, dtype=cache.dtype)
    target = cache.out_shape
    if d.shape != target:
        if cache.squeezed and d.shape == target[1:]:
            d = d[None]
        elif d.ndim == 0 and math.prod(target) == 1:
            d = d.reshape(target)
        else:
            raise ValueError(
                f"upstream gradient shape {d.shape} does not match output {target}"
            )
    _require_finite(d, "in the upstream gradient")
    if len(cache.layers) != len(cache.specs):
        raise ValueError("cache does not cover the layer chain")

    grads: list[dict[str, np.ndarray]] = [{} for _ in cache.specs]
    for i in range(len(cache.specs) - 1, -1, -1):
        layer_cache = cache.layers[i]
        kind = layer_cache[0]
        if kind == "conv":
            _, cols, w, x_shape, stride = layer_cache
            d, grads[i] = _conv_backward(d, cols, w, x_shape, stride)
        elif kind == "dense":
            _, x, w = layer_cache
            grads[i] = {"w": x.T @ d, "b": d.sum(axis=0)}
            d = d @ w.T
        elif kind == "bn_train":
            _, xhat, inv, scale, axes, m = layer_cache
            dxhat = d * scale
            grads[i] = {
                "scale": (d * xhat).sum(axis=axes),
                "shift": d.sum(axis=axes),
            }
            xmu = xhat / inv
            dvar = (dxhat * xmu).sum(axis=axes) * (-0.5) * inv**3
            dmean = -dxhat.sum(axis=axes) * inv
            d = dxhat * inv + xmu * (2.0 / m) * dvar + dmean / m
        elif kind == "bn_infer":
            _, xhat, inv, scale, axes = layer_cache
            grads[i] = {
                "scale": (d * xhat).sum(axis=axes),
                "shift": d.sum(axis=axes),
            }
            d = d * scale * inv
        elif kind == "relu":
            d = d * layer_cache[1]
        elif kind == "flatten":
            d = d.reshape(layer_cache[1])
        elif kind == "concat":
            d = d[:, : layer_cache[1]]
    dx = d[0] if cache.squeezed else d
    return grads, dx


def _conv_backward(dout, cols, w, x_shape, stride):
    n, oh, ow, f = dout.shape
    kh, kw, cin, _ = w.shape
    dflat = dout.reshape(n * oh * ow, f)
    dw = (cols.T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    dwin = (dflat @ w.reshape(-1, f).T).reshape(n, oh, ow, kh, kw, cin)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for p in range(kh):
        for q in range(kw):
            dx[:, p : p + stride * oh : stride, q : q + stride * ow : stride, :] += (
                dwin[:, :, :, p, q, :]
            )
    return dx, {"w": dw, "b": db}


@dataclass
class AdamState:
    """Bias-corrected ADAM moments mirroring the trainable parameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m = [
            {k: np.zeros_like(a) for k, a in block.items() if k in _TRAINABLE_KEYS}
            for block in params
        ]
        state.v = [{k: np.zeros_like(a) for k, a in block.items()} for block in state.m]
        return state


def adam_step(adam: AdamState, params, grads):
    """One in-place ADAM update; returns the updated params.

    Zero gradients leave parameters unchanged (moments merely decay).
    """
    if len(adam.m) != len(params):
        raise ValueError("optimizer state does not match the parameter blocks")
    adam.step += 1
    bc1 = 1.0 - adam.beta1**adam.step
    bc2 = 1.0 - adam.beta2**adam.step
    for i, key, p in trainable_items(params):
        g = grads[i][key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
        m = adam.m[i][key]
        v = adam.v[i][key]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * (g * g)
        p -= adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)
    return params


_SPEC_KINDS = {
    "conv": Conv,
    "dense": Dense,
    "batchnorm": BatchNorm,
    "activation": Activation,
    "flatten": Flatten,
    "concat": Concat,
}


def _spec_to_json(spec: LayerSpec) -> dict:
    out = {"layer": type(spec).__name__.lower()}
    for name in spec.__dataclass_fields__:
        out[name] = getattr(spec, name)
    return out


def _spec_from_json(obj: dict) -> LayerSpec:
    kind = obj.get("layer")
    if kind not in _SPEC_KINDS:
        raise ValueError(f"unknown layer kind {kind!r} in checkpoint")
    fields = {k: v for k, v in obj.items() if k != "layer"}
    return _SPEC_KINDS[kind](**fields)


@dataclass
class Checkpoint:
    specs: tuple[LayerSpec, ...]
    params: list[dict[str, np.ndarray]]
    adam: AdamState | None
    seed: int | None


def save_checkpoint(path, specs, params, adam: AdamState | None = None, seed=None):
    """Write a versioned binary snapshot (specs, params, ADAM state, seed).

    The byte stream is a fixed header, a canonical JSON index, then raw
    little-endian array data in index order; identical contents always
    produce identical bytes.
    """
    arrays: list[tuple[str, np.ndarray]] = []
    for i, block in enumerate(params):
        for key in sorted(block):
            arrays.append((f"p{i}.{key}", block[key]))
    adam_meta = None
    if adam is not None:
        for label, moments in (("m", adam.m), ("v", adam.v)):
            for i, block in enumerate(moments):
                for key in sorted(block):
                    arrays.append((f"{label}{i}.{key}", block[key]))
        adam_meta = {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "step": adam.step,
        }
    index = []
    payload = bytearray()
    for name, arr in arrays:
        a = np.ascontiguousarray(arr)
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        index.append([name, a.dtype.str, list(a.shape)])
        payload.extend(a.tobytes())
    meta = {
        "format": "dqplan-net-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "specs": [_spec_to_json(s) for s in specs],
        "adam": adam_meta,
        "blocks": len(params),
        "arrays": index,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(payload)
    return Path(path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    meta = json.loads(data[off : off + meta_len].decode())
    off += meta_len

    loaded: dict[str, np.ndarray] = {}
    for name, dtype_str, shape in meta["arrays"]:
        dt = np.dtype(dtype_str)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off)
        off += arr.nbytes
        loaded[name] = arr.reshape(shape).copy()
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")

    blocks = meta["blocks"]
    specs = tuple(_spec_from_json(o) for o in meta["specs"])

    def gather(prefix):
        out: list[dict[str, np.ndarray]] = [{} for _ in range(blocks)]
        for name, arr in loaded.items():
            head, _, key = name.partition(".")
            if head.startswith(prefix) and head[len(prefix) :].isdigit():
                out[int(head[len(prefix) :])][key] = arr
        return out

    params = gather("p")
    adam = None
    if meta["adam"] is not None:
        a = meta["adam"]
        adam = AdamState(
            lr=a["lr"],
            beta1=a["beta1"],
            beta2=a["beta2"],
            eps=a["eps"],
            step=a["step"],
            m=gather("m"),
            v=gather("v"),
        )
    return Checkpoint(specs=specs, params=params, adam=adam, seed=meta["seed"])
