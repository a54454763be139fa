"""Stage-configurable grouped-convolution residual encoder for 1-D signals.

Structure: a stride-2 stem convolution (kernel 16, one input channel)
followed by stages of residual blocks. Each block runs 1x1 conv -> grouped
16-tap conv -> 1x1 conv with swish between the convolutions, plus an
identity shortcut (1x1 projection when the channel count changes). After the last block of each
stage, channel gating: mean-pool over time, a 2-layer swish MLP (hidden
h/2), sigmoid, channel-wise multiply, and the gated tensor is added back.
The final stage output is mean-pooled over time into the embedding.

No normalization layers anywhere; temporal downsampling happens only at the
stem. The per-stage bottleneck width is round(stage_channels * ratio) and
must be divisible by the group width.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

STEM_KERNEL = 16
STEM_STRIDE = 2
BLOCK_KERNEL = 16


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int  # stem output channels
    ratio: float  # bottleneck width multiplier per stage
    group_width: int
    stages: tuple[tuple[int, int], ...]  # (channels, blocks) per stage
    name: str = "custom"

    def __post_init__(self):
        if not self.stages:
            raise ValueError("stage list must be non-empty")
        for h, blocks in self.stages:
            if h <= 0 or blocks <= 0:
                raise ValueError("stage channels and block counts must be positive")
            d1 = self.stage_width(h)
            if d1 % self.group_width != 0:
                raise ValueError(
                    f"stage width {d1} (= round({h} * {self.ratio})) "
                    f"not divisible by group width {self.group_width}"
                )
            if h % 2 != 0:
                raise ValueError("stage channels must be even (gating MLP uses h/2)")

    def stage_width(self, channels: int) -> int:
        return int(round(channels * self.ratio))

    @property
    def output_dim(self) -> int:
        return self.stages[-1][0]


# Size ladder parsed as data, plus a desk-scale Tiny variant.
STANDARD_CONFIGS: dict[str, EncoderConfig] = {
    "tiny": EncoderConfig(hidden_dim=16, ratio=0.5, group_width=4,
                          stages=((16, 1), (32, 1)), name="tiny"),
    "s": EncoderConfig(hidden_dim=32, ratio=0.5, group_width=8,
                       stages=((32, 1), (64, 1), (64, 2), (128, 2), (128, 2), (256, 2)),
                       name="s"),
    "m": EncoderConfig(hidden_dim=64, ratio=1.0, group_width=16,
                       stages=((64, 2), (160, 2), (160, 2), (400, 3), (400, 3),
                               (1024, 4), (1024, 4)),
                       name="m"),
    "l": EncoderConfig(hidden_dim=128, ratio=1.5, group_width=32,
                       stages=((128, 2), (256, 3), (256, 3), (512, 4), (512, 4),
                               (1024, 5), (1024, 5), (2048, 6), (2048, 6)),
                       name="l"),
}


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape)


class Encoder:
    """Instantiated parameters for one EncoderConfig.

    ``dtype`` selects the storage mode: float64 (default; used by gradient
    checks) or float32 (training throughput on bandwidth-starved hosts).
    Initial values are always drawn in float64 and cast, so both modes start
    from the same numbers.
    """

    def __init__(self, config: EncoderConfig, seed: int, dtype=np.float64):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(np.random.SeedSequence([seed])))

    def _add(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = ad.parameter(arr.astype(self.dtype), name=name)

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self._add("stem.w", _he_normal(rng, (STEM_KERNEL, 1, cfg.hidden_dim), STEM_KERNEL))
        self._add("stem.b", np.zeros(cfg.hidden_dim))
        in_ch = cfg.hidden_dim
        for si, (h, blocks) in enumerate(cfg.stages):
            d1 = cfg.stage_width(h)
            groups = d1 // cfg.group_width
            for bi in range(blocks):
                p = f"stage{si}.block{bi}"
                self._add(f"{p}.conv1.w", _he_normal(rng, (1, in_ch, d1), in_ch))
                self._add(f"{p}.conv1.b", np.zeros(d1))
                self._add(f"{p}.conv2.w",
                          _he_normal(rng, (BLOCK_KERNEL, d1 // groups, d1),
                                     BLOCK_KERNEL * (d1 // groups)))
                self._add(f"{p}.conv2.b", np.zeros(d1))
                self._add(f"{p}.conv3.w", _he_normal(rng, (1, d1, h), d1))
                self._add(f"{p}.conv3.b", np.zeros(h))
                if in_ch != h:
                    self._add(f"{p}.proj.w", _he_normal(rng, (1, in_ch, h), in_ch))
                    self._add(f"{p}.proj.b", np.zeros(h))
                in_ch = h
            g = f"stage{si}.gate"
            self._add(f"{g}.fc1.w", _he_normal(rng, (h, h // 2), h))
            self._add(f"{g}.fc1.b", np.zeros(h // 2))
            # near-zero final layer so gates start around sigmoid(0) = 0.5
            self._add(f"{g}.fc2.w", _he_normal(rng, (h // 2, h), h // 2, scale=0.01))
            self._add(f"{g}.fc2.b", np.zeros(h))

    # -- forward -----------------------------------------------------------

    def forward(self, signals) -> Tensor:
        """(batch, t) signals -> (batch, output_dim) embeddings."""
        x = signals if isinstance(signals, Tensor) else Tensor(np.asarray(signals, dtype=self.dtype))
        if x.data.ndim != 2:
            raise ValueError("expected a (batch, t) signal array")
        t = x.data.shape[1]
        if t < STEM_KERNEL:
            raise ValueError(f"signal length {t} shorter than the stem kernel {STEM_KERNEL}")
        p = self.params
        h = ad.reshape(x, (x.data.shape[0], t, 1))
        h = ad.swish(ad.conv1d(h, p["stem.w"], p["stem.b"], stride=STEM_STRIDE))
        in_ch = self.config.hidden_dim
        for si, (ch, blocks) in enumerate(self.config.stages):
            d1 = self.config.stage_width(ch)
            groups = d1 // self.config.group_width
            for bi in range(blocks):
                pre = f"stage{si}.block{bi}"
                y = ad.swish(ad.conv1d(h, p[f"{pre}.conv1.w"], p[f"{pre}.conv1.b"]))
                y = ad.swish(ad.conv1d(y, p[f"{pre}.conv2.w"], p[f"{pre}.conv2.b"], groups=groups))
                y = ad.conv1d(y, p[f"{pre}.conv3.w"], p[f"{pre}.conv3.b"])
                if in_ch != ch:
                    h = ad.conv1d(h, p[f"{pre}.proj.w"], p[f"{pre}.proj.b"])
                h = ad.add(y, h)
                in_ch = ch
            g = f"stage{si}.gate"
            pooled = ad.mean(h, axis=1)
            gate = ad.swish(ad.dense(pooled, p[f"{g}.fc1.w"], p[f"{g}.fc1.b"]))
            gate = ad.sigmoid(ad.dense(gate, p[f"{g}.fc2.w"], p[f"{g}.fc2.b"]))
            gated = ad.mul(h, ad.reshape(gate, (gate.data.shape[0], 1, ch)))
            h = ad.add(h, gated)
        return ad.mean(h, axis=1)

    def embed(self, signals: np.ndarray, batch_size: int = 128) -> np.ndarray:
        """Inference-only embeddings, chunked to bound memory."""
        outs = []
        for lo in range(0, signals.shape[0], batch_size):
            outs.append(self.forward(signals[lo : lo + batch_size]).data)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.config.output_dim), dtype=self.dtype)

    # -- bookkeeping ---------------------------------------------------------

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
        for name, tensor in self.params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data = arr.copy()

    def zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None


def build(config: EncoderConfig, seed: int = 0, dtype=np.float64) -> Encoder:
    """Deterministically initialize an encoder from its config and seed."""
    return Encoder(config, seed, dtype=dtype)


def param_count(config: EncoderConfig) -> int:
    """Parameter count as a pure function of the config."""
    total = STEM_KERNEL * 1 * config.hidden_dim + config.hidden_dim
    in_ch = config.hidden_dim
    for h, blocks in config.stages:
        d1 = config.stage_width(h)
        groups = d1 // config.group_width
        for bi in range(blocks):
            total += in_ch * d1 + d1  # conv1
            total += BLOCK_KERNEL * (d1 // groups) * d1 + d1  # conv2 (grouped)
            total += d1 * h + h  # conv3
            if in_ch != h:
                total += in_ch * h + h  # projection
            in_ch = h
        total += h * (h // 2) + h // 2 + (h // 2) * h + h  # gating MLP
    return total


def parameter_breakdown(config: EncoderConfig) -> dict[str, int]:
    """Per-module parameter counts (stem, each stage) for inspection."""
    out: dict[str, int] = {"stem": STEM_KERNEL * config.hidden_dim + config.hidden_dim}
    in_ch = config.hidden_dim
    for si, (h, blocks) in enumerate(config.stages):
        d1 = config.stage_width(h)
        groups = d1 // config.group_width
        count = 0
        for bi in range(blocks):
            count += in_ch * d1 + d1
            count += BLOCK_KERNEL * (d1 // groups) * d1 + d1
            count += d1 * h + h
            if in_ch != h:
                count += in_ch * h + h
            in_ch = h
        count += h * (h // 2) + h // 2 + (h // 2) * h + h
        out[f"stage{si}(h={h},blocks={blocks})"] = count
    return out


def output_length(config: EncoderConfig, t: int) -> int:
    """Temporal length bookkeeping: only the stem downsamples."""
    return -(-t // STEM_STRIDE)


# ---------------------------------------------------------------------------
# checkpoint container: versioned binary with config echo, seed, named
# float64 blobs, and a trailing sha256


_CKPT_MAGIC = b"RCLRCKPT"
_CKPT_VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, encoder: Encoder, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    header = {
        "config": asdict(encoder.config),
        "seed": encoder.seed,
        "dtype": encoder.dtype.name,
        "meta": meta or {},
    }
    blobs = {f"param/{k}": v for k, v in encoder.state_arrays().items()}
    if extra:
        blobs.update({f"extra/{k}": np.asarray(v, dtype=np.float64) for k, v in extra.items()})
    out = io.BytesIO()
    out.write(_CKPT_MAGIC)
    out.write(struct.pack("<I", _CKPT_VERSION))
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)
    out.write(struct.pack("<I", len(blobs)))
    for name, arr in blobs.items():
        nraw = name.encode("utf-8")
        out.write(struct.pack("<H", len(nraw)))
        out.write(nraw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.astype("<f8").tobytes())
    body = out.getvalue()
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> tuple[Encoder, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 32 or blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError("not a checkpoint container")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    buf = memoryview(body)
    pos = len(_CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    header = json.loads(bytes(buf[pos : pos + hlen]).decode("utf-8"))
    pos += hlen
    (n_blobs,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(n_blobs):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = bytes(buf[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += count * 8

    cfg_dict = header["config"]
    cfg_dict["stages"] = tuple(tuple(s) for s in cfg_dict["stages"])
    config = EncoderConfig(**cfg_dict)
    encoder = build(config, seed=header["seed"], dtype=np.dtype(header.get("dtype", "float64")))
    encoder.load_state_arrays(
        {k[len("param/") :]: v for k, v in blobs.items() if k.startswith("param/")}
    )
    extra = {k[len("extra/") :]: v for k, v in blobs.items() if k.startswith("extra/")}
    return encoder, extra, header["meta"]
