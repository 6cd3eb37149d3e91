"""Small CRNN embedding network with an ACCDOA or two-branch output head.

Everything is plain numpy with hand-written reverse-mode gradients. Inside the
trunk, activations are laid out channel-first as ``(channels, batch, freq, time)``
so that each convolution is a single matrix product over an im2col buffer.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from seldkit.accdoa import TwoBranchOutput, head_param_count
from seldkit.features import N_AMPLITUDE, N_BINS, N_PLANES, FeatureTensor

HEADS = ("accdoa", "two_branch")
POOL_KINDS = ("max", "avg")
CHECKPOINT_MAGIC = b"SELDCKPT"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """Raised when ``backward`` gets a cache from a different parameter state."""


@dataclass(frozen=True)
class ConvBlock:
    channels: int
    kernel: int = 3
    pool_freq: int = 4
    pool_time: int = 2
    pool: str = "avg"


def _default_blocks() -> tuple[ConvBlock, ...]:
    return (ConvBlock(16), ConvBlock(32), ConvBlock(64))


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 14
    head: str = "accdoa"
    conv_blocks: tuple[ConvBlock, ...] = field(default_factory=_default_blocks)
    hidden_size: int = 64
    input_planes: int = N_PLANES
    input_bins: int = N_BINS
    input_frames: int = 128
    # fixed gain on the amplitude planes; linear STFT magnitudes of full-scale tones reach ~120
    amplitude_scale: float = 0.01

    def __post_init__(self) -> None:
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.num_classes < 1 or self.hidden_size < 1:
            raise ConfigError("num_classes and hidden_size must be positive")
        if not self.conv_blocks:
            raise ConfigError("at least one conv block is required")
        for blk in self.conv_blocks:
            if blk.channels < 1 or blk.kernel < 1 or blk.kernel % 2 == 0:
                raise ConfigError(f"invalid conv block {blk}")
            if blk.pool_freq < 1 or blk.pool_time < 1 or blk.pool not in POOL_KINDS:
                raise ConfigError(f"invalid pooling in {blk}")
        f, t = self.input_bins, self.input_frames
        for blk in self.conv_blocks:
            f, t = f // blk.pool_freq, t // blk.pool_time
        if f < 1 or t < 1:
            raise ConfigError("pooling collapses the input to nothing")

    @property
    def temporal_pool(self) -> int:
        return int(np.prod([b.pool_time for b in self.conv_blocks]))

    @property
    def output_frames(self) -> int:
        return self.input_frames // self.temporal_pool

    @property
    def trunk_bins(self) -> int:
        f = self.input_bins
        for blk in self.conv_blocks:
            f //= blk.pool_freq
        return f

    @property
    def gru_input_size(self) -> int:
        return self.conv_blocks[-1].channels * self.trunk_bins

    def with_head(self, head: str) -> "ModelConfig":
        return replace(self, head=head)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["conv_blocks"] = [asdict(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        if "conv_blocks" in d:
            d["conv_blocks"] = tuple(ConvBlock(**b) for b in d["conv_blocks"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def trunk_hash(self) -> str:
        d = self.to_dict()
        d.pop("head")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = config.input_planes
    for i, blk in enumerate(config.conv_blocks):
        shapes[f"conv{i}.weight"] = (blk.channels, c_in, blk.kernel, blk.kernel)
        shapes[f"conv{i}.bias"] = (blk.channels,)
        c_in = blk.channels
    k, d, c = config.hidden_size, config.gru_input_size, config.num_classes
    shapes["gru.w_ih"] = (3 * k, d)
    shapes["gru.w_hh"] = (3 * k, k)
    shapes["gru.b_ih"] = (3 * k,)
    shapes["gru.b_hh"] = (3 * k,)
    if config.head == "accdoa":
        shapes["head.weight"] = (3 * c, k)
        shapes["head.bias"] = (3 * c,)
    else:
        shapes["sed1.weight"] = (k, k)
        shapes["sed1.bias"] = (k,)
        shapes["sed2.weight"] = (c, k)
        shapes["sed2.bias"] = (c,)
        shapes["doa1.weight"] = (k, k)
        shapes["doa1.bias"] = (k,)
        shapes["doa2.weight"] = (3 * c, k)
        shapes["doa2.bias"] = (3 * c,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def trunk_parameter_count(config: ModelConfig) -> int:
    return count_parameters(config) - head_param_count(
        config.hidden_size, config.num_classes, config.head
    )


class Parameters:
    """Flat parameter vector with named, shaped views.

    ``version`` increments on every in-place update so caches from older
    forward passes can be detected.
    """

    def __init__(self, config: ModelConfig, vector: NDArray | None = None, dtype=np.float32):
        self.config = config
        self.layout: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in parameter_shapes(config).items():
            self.layout[name] = (offset, shape)
            offset += int(np.prod(shape))
        if vector is None:
            vector = np.zeros(offset, dtype=dtype)
        vector = np.asarray(vector)
        if vector.shape != (offset,):
            raise ConfigError(f"parameter vector has {vector.size} values, config needs {offset}")
        self.vector = vector
        self.version = 0

    def __getitem__(self, name: str) -> NDArray:
        offset, shape = self.layout[name]
        return self.vector[offset : offset + int(np.prod(shape))].reshape(shape)

    def __len__(self) -> int:
        return self.vector.size

    def names(self) -> list[str]:
        return list(self.layout)

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "Parameters":
        return Parameters(self.config, self.vector.copy())

    def zeros_like(self) -> "Parameters":
        return Parameters(self.config, np.zeros_like(self.vector))

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config, self.vector.astype(dtype))


def init_parameters(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Parameters:
    """He-normal conv weights, PyTorch-style uniform GRU weights, Glorot heads, zero biases."""
    rng = np.random.default_rng(seed)
    params = Parameters(config, dtype=np.float64)
    for name in params.names():
        view = params[name]
        if name.endswith("bias") or name.startswith("gru.b"):
            if name.startswith("gru.b"):
                bound = 1.0 / np.sqrt(config.hidden_size)
                view[...] = rng.uniform(-bound, bound, view.shape)
            continue
        if name.startswith("conv"):
            fan_in = int(np.prod(view.shape[1:]))
            view[...] = rng.standard_normal(view.shape) * np.sqrt(2.0 / fan_in)
        elif name.startswith("gru"):
            bound = 1.0 / np.sqrt(config.hidden_size)
            view[...] = rng.uniform(-bound, bound, view.shape)
        else:
            fan_out, fan_in = view.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            view[...] = rng.uniform(-bound, bound, view.shape)
    return params.astype(dtype)


# --- layers ---------------------------------------------------------------


def _sigmoid(x: NDArray) -> NDArray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _conv_forward(x: NDArray, w: NDArray, b: NDArray):
    """Same-padded 2-D convolution; ``x`` is ``(Ci, B, F, T)``."""
    ci, bsz, f, t = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((ci, k, k, bsz, f, t), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + f, j : j + t]
    cols = cols.reshape(ci * k * k, -1)
    y = w.reshape(co, -1) @ cols
    y += b[:, None]
    return y.reshape(co, bsz, f, t), cols


def _conv_backward(dy: NDArray, cols: NDArray, w: NDArray, x_shape, need_dx: bool):
    co, ci, k, _ = w.shape
    _, bsz, f, t = x_shape
    dy2 = dy.reshape(co, -1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(co, -1).T @ dy2).reshape(ci, k, k, bsz, f, t)
    p = k // 2
    dxp = np.zeros((ci, bsz, f + 2 * p, t + 2 * p), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + f, j : j + t] += dcols[:, i, j]
    dx = dxp[:, :, p : p + f, p : p + t] if p else dxp
    return dx, dw, db


def _pool_taps(a: NDArray, pf: int, pt: int):
    """Strided views, one per window offset, each shaped like the pooled output."""
    fo, to = a.shape[2] // pf, a.shape[3] // pt
    for i in range(pf):
        for j in range(pt):
            yield (i, j), a[:, :, i : fo * pf : pf, j : to * pt : pt]


def _avg_pool(a: NDArray, pf: int, pt: int) -> NDArray:
    out = None
    for _, tap in _pool_taps(a, pf, pt):
        out = tap.copy() if out is None else np.add(out, tap, out=out)
    out *= 1.0 / (pf * pt)
    return out


def _avg_pool_backward(d: NDArray, shape, pf: int, pt: int) -> NDArray:
    out = np.zeros(shape, dtype=d.dtype)
    share = d * (1.0 / (pf * pt))
    fo, to = d.shape[2], d.shape[3]
    for i in range(pf):
        for j in range(pt):
            out[:, :, i : fo * pf : pf, j : to * pt : pt] = share
    return out


def _max_pool(a: NDArray, pf: int, pt: int) -> NDArray:
    # elementwise maxima over window offsets beat a reduction over tiny axes
    out = None
    for _, tap in _pool_taps(a, pf, pt):
        out = tap.copy() if out is None else np.maximum(out, tap, out=out)
    return out


def _max_pool_backward(d: NDArray, act: NDArray, pooled: NDArray, pf: int, pt: int) -> NDArray:
    """Route each gradient to the window maximum, shared equally between ties."""
    hits = {key: tap == pooled for key, tap in _pool_taps(act, pf, pt)}
    share = d / sum(h.astype(d.dtype) for h in hits.values())
    fo, to = d.shape[2], d.shape[3]
    out = np.zeros(act.shape, dtype=d.dtype)
    for (i, j), hit in hits.items():
        out[:, :, i : fo * pf : pf, j : to * pt : pt] = hit * share
    return out


def _gru_forward(x: NDArray, w_ih, w_hh, b_ih, b_hh):
    """Single-layer GRU over ``x`` of shape ``(B, T, D)``; returns ``(B, T, K)``."""
    bsz, t_len, _ = x.shape
    k = w_hh.shape[1]
    gi = x @ w_ih.T + b_ih
    h = np.zeros((bsz, k), dtype=x.dtype)
    hs = np.empty((bsz, t_len, k), dtype=x.dtype)
    steps = []
    for t in range(t_len):
        gh = h @ w_hh.T + b_hh
        r = _sigmoid(gi[:, t, :k] + gh[:, :k])
        z = _sigmoid(gi[:, t, k : 2 * k] + gh[:, k : 2 * k])
        n = np.tanh(gi[:, t, 2 * k :] + r * gh[:, 2 * k :])
        h_prev = h
        h = (1.0 - z) * n + z * h_prev
        hs[:, t] = h
        steps.append((r, z, n, gh[:, 2 * k :], h_prev))
    return hs, steps


def _gru_backward(dhs: NDArray, x: NDArray, steps, w_ih, w_hh):
    bsz, t_len, _ = x.shape
    k = w_hh.shape[1]
    dgi = np.empty((bsz, t_len, 3 * k), dtype=dhs.dtype)
    dw_hh = np.zeros_like(w_hh)
    db_hh = np.zeros(3 * k, dtype=dhs.dtype)
    dh_carry = np.zeros((bsz, k), dtype=dhs.dtype)
    for t in reversed(range(t_len)):
        r, z, n, ghn, h_prev = steps[t]
        dh = dhs[:, t] + dh_carry
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dz_pre = dh * (h_prev - n) * z * (1.0 - z)
        dr_pre = dn_pre * ghn * r * (1.0 - r)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        dgi[:, t] = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dw_hh += dgh.T @ h_prev
        db_hh += dgh.sum(axis=0)
        dh_carry = dh * z + dgh @ w_hh
    flat = dgi.reshape(-1, 3 * k)
    dw_ih = flat.T @ x.reshape(-1, x.shape[2])
    db_ih = flat.sum(axis=0)
    dx = dgi @ w_ih
    return dx, dw_ih, dw_hh, db_ih, db_hh


# --- network --------------------------------------------------------------


@dataclass
class ForwardCache:
    params: Parameters
    version: int
    batched: bool
    conv: list = field(default_factory=list)
    trunk_shape: tuple = ()
    seq: NDArray | None = None
    gru_steps: list = field(default_factory=list)
    embedding: NDArray | None = None
    head: dict = field(default_factory=dict)


def _as_batch(x: Any, config: ModelConfig, dtype) -> tuple[NDArray, bool]:
    data = x.data if isinstance(x, FeatureTensor) else np.asarray(x)
    batched = data.ndim == 4
    if not batched:
        data = data[None]
    expected = (config.input_planes, config.input_bins, config.input_frames)
    if data.ndim != 4 or data.shape[1:] != expected:
        raise ConfigError(f"input shape {data.shape[1:]} does not match config {expected}")
    data = data.astype(dtype, copy=True)
    data[:, :N_AMPLITUDE] *= config.amplitude_scale
    return data, batched


def embed(params: Parameters, x: Any) -> tuple[NDArray, ForwardCache]:
    """Trunk only: features ``(B, M, F, T')`` to embeddings ``(B, T, K)``."""
    cfg = params.config
    data, batched = _as_batch(x, cfg, params.vector.dtype)
    cache = ForwardCache(params=params, version=params.version, batched=batched)
    a = np.ascontiguousarray(data.transpose(1, 0, 2, 3))
    for i, blk in enumerate(cfg.conv_blocks):
        x_shape = a.shape
        y, cols = _conv_forward(a, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        mask = y > 0
        act = np.where(mask, y, 0.0).astype(y.dtype, copy=False)
        if blk.pool == "max":
            a = _max_pool(act, blk.pool_freq, blk.pool_time)
            cache.conv.append((x_shape, cols, mask, (act, a)))
        else:
            a = _avg_pool(act, blk.pool_freq, blk.pool_time)
            cache.conv.append((x_shape, cols, mask, None))
    cache.trunk_shape = a.shape
    ch, bsz, f, t = a.shape
    seq = np.ascontiguousarray(a.transpose(1, 3, 0, 2)).reshape(bsz, t, ch * f)
    cache.seq = seq
    emb, steps = _gru_forward(
        seq, params["gru.w_ih"], params["gru.w_hh"], params["gru.b_ih"], params["gru.b_hh"]
    )
    cache.gru_steps = steps
    cache.embedding = emb
    return emb, cache


def _to_grid(out: NDArray, c: int) -> NDArray:
    bsz, t, _ = out.shape
    return out.reshape(bsz, t, 3, c).transpose(0, 2, 3, 1)


def _from_grid(grid: NDArray) -> NDArray:
    bsz, _, c, t = grid.shape
    return grid.transpose(0, 3, 1, 2).reshape(bsz, t, 3 * c)


def forward(params: Parameters, x: Any):
    """Run the network.

    Returns ``(output, cache)``. For the ACCDOA head ``output`` is a grid of shape
    ``(B, 3, C, T)``; for the two-branch head it is a :class:`TwoBranchOutput` with
    ``sed`` ``(B, C, T)`` after a sigmoid and ``doa`` ``(B, 3, C, T)``. The batch
    axis is dropped when ``x`` is a single :class:`FeatureTensor` or 3-D array.
    """
    cfg = params.config
    emb, cache = embed(params, x)
    c = cfg.num_classes
    if cfg.head == "accdoa":
        out = _to_grid(emb @ params["head.weight"].T + params["head.bias"], c)
        result: Any = out if cache.batched else out[0]
    else:
        pre_s = emb @ params["sed1.weight"].T + params["sed1.bias"]
        h_s = np.maximum(pre_s, 0.0)
        prob = _sigmoid(h_s @ params["sed2.weight"].T + params["sed2.bias"])
        pre_d = emb @ params["doa1.weight"].T + params["doa1.bias"]
        h_d = np.maximum(pre_d, 0.0)
        doa = _to_grid(h_d @ params["doa2.weight"].T + params["doa2.bias"], c)
        cache.head = {"pre_s": pre_s, "h_s": h_s, "prob": prob, "pre_d": pre_d, "h_d": h_d}
        sed = prob.transpose(0, 2, 1)
        result = TwoBranchOutput(sed, doa) if cache.batched else TwoBranchOutput(sed[0], doa[0])
    return result, cache


def backward(params: Parameters, cache: ForwardCache, loss_gradient: Any) -> Parameters:
    """Gradient of the loss with respect to every parameter.

    ``loss_gradient`` is the gradient with respect to the forward output, in the
    same structure (a grid, or a :class:`TwoBranchOutput` whose ``sed`` part is
    taken with respect to the post-sigmoid probabilities).
    """
    if cache.params is not params or cache.version != params.version:
        raise StaleCacheError("cache was produced by a different parameter state")
    cfg = params.config
    grads = params.zeros_like()
    emb = cache.embedding
    dtype = params.vector.dtype

    def batched(a: NDArray) -> NDArray:
        a = np.asarray(a, dtype=dtype)
        return a if cache.batched else a[None]

    if cfg.head == "accdoa":
        dout = _from_grid(batched(loss_gradient))
        grads["head.weight"][...] = np.einsum("btj,btk->jk", dout, emb)
        grads["head.bias"][...] = dout.sum(axis=(0, 1))
        demb = dout @ params["head.weight"]
    else:
        h = cache.head
        dprob = batched(loss_gradient.sed).transpose(0, 2, 1)
        dlogit = dprob * h["prob"] * (1.0 - h["prob"])
        grads["sed2.weight"][...] = np.einsum("btj,btk->jk", dlogit, h["h_s"])
        grads["sed2.bias"][...] = dlogit.sum(axis=(0, 1))
        dpre_s = (dlogit @ params["sed2.weight"]) * (h["pre_s"] > 0)
        grads["sed1.weight"][...] = np.einsum("btj,btk->jk", dpre_s, emb)
        grads["sed1.bias"][...] = dpre_s.sum(axis=(0, 1))
        ddoa = _from_grid(batched(loss_gradient.doa))
        grads["doa2.weight"][...] = np.einsum("btj,btk->jk", ddoa, h["h_d"])
        grads["doa2.bias"][...] = ddoa.sum(axis=(0, 1))
        dpre_d = (ddoa @ params["doa2.weight"]) * (h["pre_d"] > 0)
        grads["doa1.weight"][...] = np.einsum("btj,btk->jk", dpre_d, emb)
        grads["doa1.bias"][...] = dpre_d.sum(axis=(0, 1))
        demb = dpre_s @ params["sed1.weight"] + dpre_d @ params["doa1.weight"]

    dseq, dw_ih, dw_hh, db_ih, db_hh = _gru_backward(
        demb, cache.seq, cache.gru_steps, params["gru.w_ih"], params["gru.w_hh"]
    )
    grads["gru.w_ih"][...] = dw_ih
    grads["gru.w_hh"][...] = dw_hh
    grads["gru.b_ih"][...] = db_ih
    grads["gru.b_hh"][...] = db_hh

    ch, bsz, f, t = cache.trunk_shape
    da = dseq.reshape(bsz, t, ch, f).transpose(2, 0, 3, 1)
    for i in reversed(range(len(cfg.conv_blocks))):
        blk = cfg.conv_blocks[i]
        x_shape, cols, mask, pooled = cache.conv[i]
        if pooled is None:
            act_shape = (blk.channels,) + x_shape[1:]
            dact = _avg_pool_backward(da, act_shape, blk.pool_freq, blk.pool_time)
        else:
            dact = _max_pool_backward(da, *pooled, blk.pool_freq, blk.pool_time)
        dy = dact * mask
        dx, dw, db = _conv_backward(dy, cols, params[f"conv{i}.weight"], x_shape, need_dx=i > 0)
        grads[f"conv{i}.weight"][...] = dw
        grads[f"conv{i}.bias"][...] = db
        da = dx
    return grads


def trunk_parameter_names(config: ModelConfig) -> list[str]:
    return [n for n in parameter_shapes(config) if n.startswith(("conv", "gru"))]


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(path: str | Path, params: Parameters) -> None:
    """Write a versioned checkpoint: magic, version, config hash, config JSON, tensors.

    Tensors are stored as little-endian float32 with their names and shapes.
    """
    cfg_json = params.config.canonical_json().encode()
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        bytes.fromhex(params.config.config_hash()),
        struct.pack("<I", len(cfg_json)),
        cfg_json,
        struct.pack("<I", len(params.layout)),
    ]
    for name in params.names():
        tensor = params[name]
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> Parameters:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 4
    digest = raw[pos : pos + 32].hex()
    pos += 32
    (n_cfg,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    config = ModelConfig.from_dict(json.loads(raw[pos : pos + n_cfg]))
    pos += n_cfg
    if config.config_hash() != digest:
        raise ValueError(f"{path}: config hash mismatch")
    params = Parameters(config)
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    for _ in range(count):
        (n_name,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + n_name].decode()
        pos += n_name
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=pos)
        pos += 4 * size
        if name not in params.layout or params.layout[name][1] != tuple(shape):
            raise ValueError(f"{path}: tensor {name} {shape} does not fit the config")
        params[name][...] = values.reshape(shape)
    return params
