"""CNN feature extractor -> self-attention encoder -> classifier head.

The network is a plain ordered dict of named parameter tensors plus the
functions that read them; there is no layer class hierarchy.
"""

from __future__ import annotations

import dataclasses
import io
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BuildError, CheckpointFormatError, CheckpointVersionError, DimensionError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"NIAL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    pool_window: int = 2
    pool_stride: int = 2

    def to_text(self) -> str:
        return ":".join(str(v) for v in dataclasses.astuple(self))

    @classmethod
    def from_text(cls, text: str) -> "ConvBlock":
        parts = [int(p) for p in text.strip().split(":")]
        if len(parts) != 6:
            raise ValueError(f"conv block needs 6 fields out:kernel:stride:padding:pool:pool_stride, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 187
    conv_blocks: tuple = (
        ConvBlock(32, 5, 1, 2, 2, 2),
        ConvBlock(64, 5, 1, 2, 2, 2),
    )
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    n_attn_layers: int = 2
    dropout_p: float = 0.1
    head_hidden: int = 64
    n_classes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(self.conv_blocks))

    @classmethod
    def mitbih(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def ptbdb(cls) -> "ModelConfig":
        return cls(n_classes=1)

    @classmethod
    def tiny(cls, input_len: int = 32, n_classes: int = 3) -> "ModelConfig":
        return cls(
            input_len=input_len,
            conv_blocks=(ConvBlock(8, 5, 1, 2, 2, 2),),
            d_model=8,
            n_heads=2,
            ff_dim=16,
            n_attn_layers=1,
            dropout_p=0.0,
            head_hidden=8,
            n_classes=n_classes,
        )

    @property
    def is_binary(self) -> bool:
        return self.n_classes == 1

    def sequence_lengths(self) -> list[int]:
        """Sequence length after each conv block; raises BuildError on a collapsing stage."""
        if self.input_len < 1:
            raise BuildError(f"input_len must be >= 1, got {self.input_len}")
        lengths = []
        length = self.input_len
        for i, blk in enumerate(self.conv_blocks):
            if min(blk.out_channels, blk.kernel, blk.stride, blk.pool_window, blk.pool_stride) < 1 or blk.padding < 0:
                raise BuildError(f"conv block {i}: sizes must be positive ({blk})")
            if blk.kernel > length + 2 * blk.padding:
                raise BuildError(
                    f"conv block {i}: kernel {blk.kernel} exceeds padded length {length + 2 * blk.padding}"
                )
            length = T.conv1d_out_len(length, blk.kernel, blk.stride, blk.padding)
            if blk.pool_window > length:
                raise BuildError(f"conv block {i}: pool window {blk.pool_window} exceeds length {length}")
            length = T.pool1d_out_len(length, blk.pool_window, blk.pool_stride)
            lengths.append(length)
        return lengths

    def validate(self) -> None:
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise BuildError(f"attention: d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_classes < 1:
            raise BuildError(f"head: n_classes must be >= 1, got {self.n_classes}")
        if self.ff_dim < 1 or self.head_hidden < 1 or self.n_attn_layers < 0:
            raise BuildError("ff_dim and head_hidden must be >= 1, n_attn_layers >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise BuildError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        self.sequence_lengths()

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "conv_blocks":
                out[f.name] = ",".join(b.to_text() for b in value)
            else:
                out[f.name] = repr(value)
        return out

    def to_text(self) -> str:
        """Canonical ``key=value`` lines, sorted by key."""
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_dict().items()))

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown model config key {key!r}")
            raw = raw.strip()
            if key == "conv_blocks":
                kwargs[key] = tuple(ConvBlock.from_text(b) for b in raw.split(",") if b.strip())
            elif key == "dropout_p":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed config line {line!r}")
            values[key.strip()] = value
        return cls.from_dict(values)


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple, str]]:
    """(name, shape, init kind) in canonical order."""
    specs = []
    cin = 1
    for i, blk in enumerate(cfg.conv_blocks):
        specs.append((f"conv{i}.weight", (blk.out_channels, cin, blk.kernel), "he"))
        specs.append((f"conv{i}.bias", (blk.out_channels,), "zeros"))
        cin = blk.out_channels
    d = cfg.d_model
    specs.append(("proj.weight", (cin, d), "he"))
    specs.append(("proj.bias", (d,), "zeros"))
    for i in range(cfg.n_attn_layers):
        p = f"attn{i}"
        specs += [(f"{p}.ln1.gamma", (d,), "ones"), (f"{p}.ln1.beta", (d,), "zeros")]
        for name in ("q", "k", "v", "o"):
            specs += [(f"{p}.{name}.weight", (d, d), "uniform"), (f"{p}.{name}.bias", (d,), "zeros")]
        specs += [(f"{p}.ln2.gamma", (d,), "ones"), (f"{p}.ln2.beta", (d,), "zeros")]
        specs += [(f"{p}.ff1.weight", (d, cfg.ff_dim), "he"), (f"{p}.ff1.bias", (cfg.ff_dim,), "zeros")]
        specs += [(f"{p}.ff2.weight", (cfg.ff_dim, d), "he"), (f"{p}.ff2.bias", (d,), "zeros")]
    specs.append(("head.fc1.weight", (d, cfg.head_hidden), "he"))
    specs.append(("head.fc1.bias", (cfg.head_hidden,), "zeros"))
    specs.append(("head.fc2.weight", (cfg.head_hidden, cfg.n_classes), "he"))
    specs.append(("head.fc2.bias", (cfg.n_classes,), "zeros"))
    return specs


def _fan_in(shape: tuple) -> int:
    # conv weights are (out, in, k); dense weights are (in, out)
    return shape[1] * shape[2] if len(shape) == 3 else shape[0]


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


class NialModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor], dropout_seed: int = 0):
        self.config = config
        self.params = params
        self.training = True
        self.rng = np.random.default_rng(dropout_seed)
        self.attention_maps: list[np.ndarray] = []
        self._pe = positional_encoding(config.sequence_lengths()[-1] if config.conv_blocks else config.input_len,
                                       config.d_model)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def train(self) -> "NialModel":
        self.training = True
        return self

    def eval(self) -> "NialModel":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data = np.array(state[k], dtype=np.float64)

    def _dense(self, x: Tensor, prefix: str) -> Tensor:
        return x @ self.params[f"{prefix}.weight"] + self.params[f"{prefix}.bias"]

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout_p, self.rng, self.training)

    def multi_head_attention(self, x: Tensor, prefix: str) -> tuple[Tensor, np.ndarray]:
        """Scaled dot-product self-attention; returns output and weights (B, H, T, T)."""
        batch, steps, d = x.shape
        h = self.config.n_heads
        dk = d // h

        def heads(t: Tensor) -> Tensor:
            return t.reshape(batch, steps, h, dk).transpose(0, 2, 1, 3)

        q = heads(self._dense(x, f"{prefix}.q"))
        k = heads(self._dense(x, f"{prefix}.k"))
        v = heads(self._dense(x, f"{prefix}.v"))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
        weights = T.softmax(scores, axis=-1)
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, steps, d)
        return self._dense(mixed, f"{prefix}.o"), weights.data

    def attention_block(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.config.d_model:
            raise DimensionError(f"attention block expects (B, T, {self.config.d_model}), got {x.shape}")
        steps = x.shape[1]
        pe = self._pe if self._pe.shape[0] == steps else positional_encoding(steps, self.config.d_model)
        x = x + pe
        self.attention_maps = []
        p = self.params
        for i in range(self.config.n_attn_layers):
            pre = f"attn{i}"
            attn, weights = self.multi_head_attention(
                T.layernorm(x, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"]), pre
            )
            self.attention_maps.append(weights)
            x = x + self._dropout(attn)
            hidden = T.relu(self._dense(T.layernorm(x, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"]), f"{pre}.ff1"))
            x = x + self._dropout(self._dense(hidden, f"{pre}.ff2"))
        return x

    def forward(self, batch) -> Tensor:
        """Raw logits (B, n_classes) for signals shaped (B, 1, input_len)."""
        x = T.as_tensor(batch)
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_len:
            raise DimensionError(f"expected input (B, 1, {cfg.input_len}), got {x.shape}")
        for i, blk in enumerate(cfg.conv_blocks):
            x = T.conv1d(x, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], blk.stride, blk.padding)
            x = T.maxpool1d(T.relu(x), blk.pool_window, blk.pool_stride)
        x = self._dense(x.transpose(0, 2, 1), "proj")
        x = self.attention_block(x)
        pooled = x.mean(axis=1)
        hidden = self._dropout(T.relu(self._dense(pooled, "head.fc1")))
        return self._dense(hidden, "head.fc2")

    __call__ = forward

    def loss(self, logits: Tensor, labels) -> Tensor:
        if self.config.is_binary:
            return T.binary_cross_entropy(logits, labels)
        return T.categorical_cross_entropy(logits, labels)

    def predict(self, signals: np.ndarray) -> np.ndarray:
        """Class indices from an eval-mode pass; binary heads threshold sigmoid at 0.5."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                logits = self.forward(signals).data
        finally:
            self.training = was_training
        return predictions_from_logits(logits)


def predictions_from_logits(logits: np.ndarray) -> np.ndarray:
    if logits.shape[-1] == 1:
        return (logits[:, 0] >= 0.0).astype(np.int64)  # sigmoid(z) >= 0.5
    return logits.argmax(axis=-1).astype(np.int64)


def build(config: ModelConfig, seed: int) -> NialModel:
    """Instantiate parameters from ``seed``; the same seed gives bit-identical weights."""
    config.validate()
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    params = {}
    for name, shape, kind in _param_shapes(config):
        if kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "he":
            data = rng.normal(0.0, math.sqrt(2.0 / _fan_in(shape)), size=shape)
        else:
            limit = math.sqrt(3.0 / _fan_in(shape))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    model = NialModel(config, params)
    model.rng = np.random.default_rng(dropout_seq)
    return model


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def checkpoint_bytes(model: NialModel) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return buf.getvalue()


def save(model: NialModel, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(model))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"checkpoint truncated while reading {what}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_checkpoint_bytes(blob: bytes) -> NialModel:
    r = _Reader(blob)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a NIAL checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config = ModelConfig.from_text(r.take(cfg_len, "config").decode("utf-8"))
        config.validate()
    except (ValueError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"invalid config block: {exc}") from exc

    (count,) = r.unpack("<I", "tensor count")
    found: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I", "tensor name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not valid UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").reshape(dims)
        if name in found:
            raise CheckpointFormatError(f"duplicate tensor {name!r}")
        found[name] = values.astype(np.float64)
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - r.pos} trailing bytes after last tensor")

    params = {}
    for name, shape, _ in _param_shapes(config):
        if name not in found:
            raise CheckpointFormatError(f"checkpoint is missing parameter {name!r}")
        if found[name].shape != shape:
            raise CheckpointFormatError(f"parameter {name!r} has shape {found[name].shape}, expected {shape}")
        params[name] = Tensor(found.pop(name), requires_grad=True)
    if found:
        raise CheckpointFormatError(f"unexpected parameters in checkpoint: {sorted(found)}")
    return NialModel(config, params)


def load(path) -> NialModel:
    with open(path, "rb") as fh:
        return from_checkpoint_bytes(fh.read())
