"""FurcaNet assembly: gated-conv front-end over raw frames, BiLSTM across the
frame sequence, dense layers, and a linear head emitting one frame per source;
overlap-add turns per-frame outputs back into full utterances.

The first gated conv spans the whole frame, collapsing its time axis into a
feature vector; later gated convs are pointwise over those features (an
optional cross-frame kernel is available for exploration and keeps the frame
count via symmetric zero padding).
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers as ly
from . import signal as sig
from .autodiff import Node, ParamStore
from .signal import FrameGeometry, Waveform

CHECKPOINT_MAGIC = b"FSEPCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted, or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Every architecture hyperparameter. Defaults are the desk-scale setup:
    the smallest widths that reach the held-out separation target in minutes
    on one CPU core."""

    num_sources: int = 2
    frame_len: int = 80
    hop: int = 40
    gconv_layers: int = 5
    gconv_channels: int = 32
    first_kernel_len: int = 80
    gconv_cross_frame_len: int = 1  # kernel across frames in later gated convs
    bilstm_layers: int = 2
    bilstm_hidden: int = 64
    dnn_layers: int = 2
    dnn_width: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.num_sources < 2:
            raise ValueError(f"num_sources must be >= 2, got {self.num_sources}")
        if self.first_kernel_len != self.frame_len:
            raise ValueError(
                f"first_kernel_len {self.first_kernel_len} must equal frame_len {self.frame_len}"
            )
        if not (0 < self.hop <= self.frame_len):
            raise ValueError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        for name in ("gconv_layers", "gconv_channels", "gconv_cross_frame_len",
                     "bilstm_layers", "bilstm_hidden", "dnn_layers", "dnn_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


# Full-size FurcaNet widths; far beyond desk scale, kept for reference runs.
FULL_SCALE_CONFIG = ModelConfig(gconv_channels=1000, bilstm_hidden=1000, dnn_width=2000)


class FurcaNet:
    """The separation network plus its frame-in / utterance-out pipeline."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.params = ParamStore()
        rng = np.random.default_rng(config.seed)
        c = config
        self.gconvs = []
        self.norms = []
        for i in range(c.gconv_layers):
            if i == 0:
                layer = ly.GConvLayer(self.params, "gconv1", 1, c.gconv_channels, c.first_kernel_len, 1, rng)
            else:
                layer = ly.GConvLayer(
                    self.params, f"gconv{i + 1}", c.gconv_channels, c.gconv_channels,
                    c.gconv_cross_frame_len, 1, rng,
                )
            self.gconvs.append(layer)
            self.norms.append(ly.LayerNorm(self.params, f"ln{i + 1}", c.gconv_channels))
        self.bilstms = []
        lstm_in = c.gconv_channels
        for i in range(c.bilstm_layers):
            self.bilstms.append(ly.BiLstmLayer(self.params, f"bilstm{i + 1}", lstm_in, c.bilstm_hidden, rng))
            lstm_in = 2 * c.bilstm_hidden
        self.dnn = []
        dense_in = lstm_in
        for i in range(c.dnn_layers):
            self.dnn.append(ly.DenseLayer(self.params, f"dnn{i + 1}", dense_in, c.dnn_width, "relu", rng))
            dense_in = c.dnn_width
        self.head = ly.DenseLayer(self.params, "head", dense_in, c.num_sources * c.frame_len, "linear", rng)

    @property
    def param_count(self) -> int:
        return self.params.total_size

    def reinit(self, seed: int) -> None:
        """Re-draw all parameters from a new seed, in place."""
        fresh = FurcaNet(dataclasses.replace(self.config, seed=seed))
        self.params.load_flat_values(fresh.params.flat_values())
        self.config = fresh.config

    def _gconv_over_frames(self, layer: ly.GConvLayer, h: Node, num_steps: int, batch_size: int) -> Node:
        k = layer.kernel_len
        if k == 1:
            return layer.forward_windows(h)
        # symmetric zero padding across frames keeps the frame count
        channels = layer.in_channels
        pad_left = (k - 1) // 2
        pad_right = k // 2
        pieces = []
        if pad_left:
            pieces.append(ad.constant(np.zeros((pad_left * batch_size, channels))))
        pieces.append(h)
        if pad_right:
            pieces.append(ad.constant(np.zeros((pad_right * batch_size, channels))))
        padded = ad.concat(pieces, axis=0) if len(pieces) > 1 else h
        t_idx = np.arange(num_steps)[:, None, None]
        b_idx = np.arange(batch_size)[None, :, None]
        k_idx = np.arange(k)[None, None, :]
        rows = ((t_idx + k_idx) * batch_size + b_idx).reshape(-1)
        windows = ad.reshape(ad.gather_rows(padded, rows), (num_steps * batch_size, k * channels))
        return layer.forward_windows(windows)

    def forward_batch(self, mixtures: list[Waveform]) -> list[list[Node]]:
        """Forward a batch of equal-length mixtures; returns per-utterance lists of S outputs."""
        if not mixtures:
            raise ValueError("forward_batch: empty batch")
        c = self.config
        length = len(mixtures[0])
        if length < c.frame_len:
            raise ValueError(f"input length {length} shorter than frame_len {c.frame_len}")
        for w in mixtures:
            if len(w) != length:
                raise ValueError(f"forward_batch: mixed lengths {length} vs {len(w)}")
        batch = len(mixtures)
        geometry = FrameGeometry(c.frame_len, c.hop)
        stacked = None
        for b, w in enumerate(mixtures):
            frames = sig.frame(w, geometry).frames
            if stacked is None:
                stacked = np.empty((frames.shape[0] * batch, c.frame_len))
            stacked[b::batch] = frames  # time-major rows
        num_steps = stacked.shape[0] // batch
        h = ad.constant(stacked)
        for i, (gconv, norm) in enumerate(zip(self.gconvs, self.norms)):
            if i == 0:
                h = gconv.forward_windows(h)  # each row is already one full-frame window
            else:
                h = self._gconv_over_frames(gconv, h, num_steps, batch)
            h = norm.forward(h)
        for lstm in self.bilstms:
            h = lstm.forward(h, batch_size=batch)
        for dense in self.dnn:
            h = dense.forward(h)
        head_out = self.head.forward(h)  # [T*B x S*frame_len]
        outputs = []
        for b in range(batch):
            rows = ad.gather_rows(head_out, np.arange(num_steps) * batch + b)
            per_source = []
            for s in range(c.num_sources):
                frames_node = ad.narrow(rows, 1, s * c.frame_len, (s + 1) * c.frame_len)
                per_source.append(ly.overlap_add_frames(frames_node, c.hop, length))
            outputs.append(per_source)
        return outputs

    def forward_utterance(self, mixture: Waveform) -> list[Node]:
        return self.forward_batch([mixture])[0]

    def separate(self, mixture: Waveform) -> list[Waveform]:
        """Inference: forward values detached from the graph, returned as waveforms."""
        outs = self.forward_utterance(mixture)
        return [Waveform(o.value.copy(), mixture.sample_rate_hz) for o in outs]

    def loss_on_example(self, example) -> Node:
        if len(example.sources) != self.config.num_sources:
            raise ValueError(
                f"example has {len(example.sources)} sources, model expects {self.config.num_sources}"
            )
        outputs = self.forward_utterance(example.mixture)
        return ly.usdr_loss([s.samples for s in example.sources], outputs)


def build(config: ModelConfig) -> FurcaNet:
    return FurcaNet(config)


def save_checkpoint(model: FurcaNet, path) -> None:
    """Versioned binary checkpoint: magic, version, config JSON, raw float64 LE
    parameters in store order, CRC32 footer."""
    cfg_json = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    values = model.params.flat_values()
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<I", len(cfg_json))
        + cfg_json
        + struct.pack("<Q", values.size)
        + values.astype("<f8").tobytes()
    )
    payload += struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(payload)


def load_checkpoint(path) -> FurcaNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    version, cfg_len = struct.unpack_from("<II", data, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.from_dict(json.loads(data[offset : offset + cfg_len].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config block ({exc})") from exc
    offset += cfg_len
    (count,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    model = FurcaNet(cfg)
    if count != model.params.total_size:
        raise CheckpointError(
            f"{path}: parameter count {count} does not match config ({model.params.total_size})"
        )
    blob = data[offset:-4]
    if len(blob) != 8 * count:
        raise CheckpointError(f"{path}: parameter block has {len(blob)} bytes, expected {8 * count}")
    model.params.load_flat_values(np.frombuffer(blob, dtype="<f8").copy())
    return model
