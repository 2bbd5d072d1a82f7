"""Shared convolutional encoder from segments to unit-norm embeddings.

One parameter set serves every tuple slot: anchors, positives, and
negatives all pass through the same module, and similarity is computed
between its outputs. Conv blocks use same-padding, ReLU, and max pooling;
the pooling plan must collapse the time-frequency grid to 1x1 before the
linear projection, which is validated against the configured input shape
at construction time.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .features import FeatureMatrix, Segment


class EncoderConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ConvBlockSpec:
    filters: int
    kernel: tuple[int, int] = (3, 3)
    pool: tuple[int, int] = (2, 2)

    def __post_init__(self) -> None:
        if self.filters < 1:
            raise EncoderConfigError(f"filters must be >= 1, got {self.filters}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise EncoderConfigError(f"kernel dims must be odd and >= 1, got {self.kernel}")
        if any(p < 1 for p in self.pool):
            raise EncoderConfigError(f"pool dims must be >= 1, got {self.pool}")


@dataclass(frozen=True)
class EncoderConfig:
    input_frames: int
    input_bins: int
    conv_blocks: tuple[ConvBlockSpec, ...]
    embedding_dim: int = 256
    filter_multiplier: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_frames < 1 or self.input_bins < 1:
            raise EncoderConfigError("input shape dims must be >= 1")
        if self.embedding_dim < 1:
            raise EncoderConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if not self.conv_blocks:
            raise EncoderConfigError("at least one conv block is required")
        if self.filter_multiplier <= 0:
            raise EncoderConfigError(
                f"filter_multiplier must be positive, got {self.filter_multiplier}"
            )

    @property
    def realized_filters(self) -> tuple[int, ...]:
        return tuple(
            max(1, int(round(b.filters * self.filter_multiplier))) for b in self.conv_blocks
        )

    def grid_after_blocks(self) -> tuple[int, int]:
        frames, bins = self.input_frames, self.input_bins
        for block in self.conv_blocks:
            # same-padded conv keeps the grid; pooling floors it
            frames = frames // block.pool[0]
            bins = bins // block.pool[1]
            if frames < 1 or bins < 1:
                return (frames, bins)
        return (frames, bins)

    def to_dict(self) -> dict:
        return {
            "input_frames": self.input_frames,
            "input_bins": self.input_bins,
            "conv_blocks": [
                {"filters": b.filters, "kernel": list(b.kernel), "pool": list(b.pool)}
                for b in self.conv_blocks
            ],
            "embedding_dim": self.embedding_dim,
            "filter_multiplier": self.filter_multiplier,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(
            input_frames=d["input_frames"],
            input_bins=d["input_bins"],
            conv_blocks=tuple(
                ConvBlockSpec(b["filters"], tuple(b["kernel"]), tuple(b["pool"]))
                for b in d["conv_blocks"]
            ),
            embedding_dim=d["embedding_dim"],
            filter_multiplier=d["filter_multiplier"],
            seed=d["seed"],
        )


def _simulate(size: int, pools: list[int]) -> int:
    for p in pools:
        size //= p
    return size


def _plan_dim(size: int, n_blocks: int) -> list[int]:
    # prefer the big pool first (the grid is largest there), fall back to
    # halvings with the last block absorbing whatever remains
    first = max(size // 2 ** (n_blocks - 1), 1)
    eager = [first] + [2] * (n_blocks - 1)
    if _simulate(size, eager) == 1:
        return eager
    pools = []
    remaining = size
    for _ in range(n_blocks - 1):
        p = 2 if remaining >= 2 else 1
        pools.append(p)
        remaining //= p
    pools.append(max(remaining, 1))
    return pools


def plan_pooling(frames: int, bins: int, n_blocks: int) -> tuple[tuple[int, int], ...]:
    """Per-block pool sizes that floor the grid down to exactly 1x1."""
    return tuple(zip(_plan_dim(frames, n_blocks), _plan_dim(bins, n_blocks)))


def default_encoder_config(
    input_frames: int,
    input_bins: int,
    base_filters: tuple[int, ...] = (4, 8, 16, 32),
    kernel: tuple[int, int] = (3, 3),
    embedding_dim: int = 256,
    filter_multiplier: float = 2.0,
    seed: int = 0,
) -> EncoderConfig:
    pools = plan_pooling(input_frames, input_bins, len(base_filters))
    blocks = tuple(
        ConvBlockSpec(filters=f, kernel=kernel, pool=p) for f, p in zip(base_filters, pools)
    )
    return EncoderConfig(
        input_frames=input_frames,
        input_bins=input_bins,
        conv_blocks=blocks,
        embedding_dim=embedding_dim,
        filter_multiplier=filter_multiplier,
        seed=seed,
    )


class SegmentEncoder(nn.Module):
    """Conv blocks -> 1x1 grid -> linear projection -> L2 normalization."""

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        grid = config.grid_after_blocks()
        if grid != (1, 1):
            raise EncoderConfigError(
                f"pooling must reduce the {config.input_frames}x{config.input_bins} "
                f"grid to 1x1 before the projection; this plan leaves {grid[0]}x{grid[1]}"
            )
        self.config = config
        torch.manual_seed(config.seed)
        layers: list[nn.Module] = []
        in_ch = 1
        for block, filters in zip(config.conv_blocks, config.realized_filters):
            padding = (block.kernel[0] // 2, block.kernel[1] // 2)
            layers.append(nn.Conv2d(in_ch, filters, block.kernel, padding=padding))
            layers.append(nn.ReLU())
            layers.append(nn.MaxPool2d(block.pool))
            in_ch = filters
        self.blocks = nn.Sequential(*layers)
        self.projection = nn.Linear(in_ch, config.embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.blocks(x)
        z = self.projection(z.flatten(1))
        return nn.functional.normalize(z, dim=1)

    @property
    def segment_len(self) -> int:
        return self.config.input_frames

    def embed_segments(self, values: np.ndarray | torch.Tensor) -> np.ndarray:
        """Batched inference: (B, frames, bins) -> (B, embedding_dim) float32."""
        if isinstance(values, np.ndarray):
            values = torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32))
        param_dtype = next(self.parameters()).dtype
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                out = self(values.unsqueeze(1).to(param_dtype))
        finally:
            self.train(was_training)
        return out.to(torch.float32).numpy()

    def embed(self, segment: Segment) -> np.ndarray:
        if segment.values.shape != (self.config.input_frames, self.config.input_bins):
            raise ValueError(
                f"segment shape {segment.values.shape} does not match configured "
                f"input ({self.config.input_frames}, {self.config.input_bins})"
            )
        return self.embed_segments(segment.values[None])[0]

    def embed_song(self, feature: FeatureMatrix, hop: int | None = None) -> np.ndarray:
        """Renormalized mean of window embeddings at the given stride."""
        seg_len = self.config.input_frames
        if feature.n_frames < seg_len:
            raise ValueError(
                f"track has {feature.n_frames} frames, need at least {seg_len}"
            )
        if feature.n_bins != self.config.input_bins:
            raise ValueError(
                f"feature has {feature.n_bins} bins, encoder expects {self.config.input_bins}"
            )
        hop = seg_len if hop in (None, 0) else hop
        if hop < 1:
            raise ValueError(f"hop must be >= 1, got {hop}")
        starts = range(0, feature.n_frames - seg_len + 1, hop)
        windows = np.stack([feature.values[s : s + seg_len] for s in starts])
        embeddings = self.embed_segments(windows)
        mean = embeddings.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            raise ValueError("window embeddings average to the zero vector; cannot normalize")
        return (mean / norm).astype(np.float32)

    def parameter_checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.state_dict().items():
            digest.update(name.encode())
            digest.update(tensor.detach().to(torch.float32).numpy().tobytes())
        return digest.hexdigest()


def init_encoder(config: EncoderConfig) -> SegmentEncoder:
    """Seeded construction; identical configs yield identical parameters."""
    return SegmentEncoder(config)


# --- checkpoint container ---------------------------------------------------
#
# Layout: magic "TCK1", uint32 header length, UTF-8 JSON header (sorted keys),
# then raw little-endian tensor bytes in the order listed by the header. The
# writer is fully deterministic, so save -> load -> save is byte-identical.

CHECKPOINT_MAGIC = b"TCK1"
CHECKPOINT_VERSION = 1


def write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        blobs.append(arr.tobytes())
    header = {"version": CHECKPOINT_VERSION, "meta": meta, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    header_len = struct.unpack("<I", raw[4:8])[0]
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: container version {header.get('version')} != {CHECKPOINT_VERSION}"
        )
    offset = 8 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(entry["dtype"]).itemsize
        blob = raw[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype=entry["dtype"]).reshape(
            entry["shape"]
        ).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], tensors
