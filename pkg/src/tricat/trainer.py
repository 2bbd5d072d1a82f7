"""Joint training loop: stream tuples, sum concept losses, update one encoder.

Every step draws one tuple batch per active concept from the train regime,
embeds all slots through the shared encoder in a single forward pass, and
applies one optimizer update to the summed objective. All randomness is
derived per (seed, concept, step), so resuming from a checkpoint replays
the exact stream an uninterrupted run would have seen.

The metrics log (metrics.jsonl) carries only deterministic values; wall
times go to a timings.jsonl sidecar so that identically-seeded runs produce
byte-identical metrics files.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .catalog import CatalogIndex, Split
from .features import FeatureStore
from .losses import MarginConfig, batch_margin_loss
from .model import (
    CheckpointError,
    EncoderConfig,
    SegmentEncoder,
    init_encoder,
    read_container,
    write_container,
)
from .sampler import Concept, Regime, TupleSampler, TupleSpec
from .seeding import derive_rng

METRIC_FIELDS = (
    "step",
    "loss_total",
    "loss_artist",
    "loss_album",
    "loss_track",
    "val_acc_artist",
    "val_acc_album",
    "val_acc_track",
)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-4

    def __post_init__(self) -> None:
        if self.name != "sgd":
            raise ValueError(f"unsupported optimizer {self.name!r} (only 'sgd')")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class TrainConfig:
    concepts: tuple[Concept, ...] = (Concept.ARTIST, Concept.ALBUM, Concept.TRACK)
    segment_len: int = 16
    n_negatives: int = 4
    batch_size: int = 8
    steps: int = 2500
    eval_every: int = 250
    seed: int = 0
    margins: MarginConfig = MarginConfig()
    weights: Mapping[str, float] | None = None
    optimizer: OptimizerConfig = OptimizerConfig()
    val_tuples: int = 64
    distinct_negatives: bool = True
    reduce_negatives: str = "sum"
    torch_threads: int = 1

    def __post_init__(self) -> None:
        if not self.concepts:
            raise ValueError("concepts must be non-empty")
        object.__setattr__(self, "concepts", tuple(Concept(c) for c in self.concepts))
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 1:
            raise ValueError("batch_size/eval_every must be >= 1 and steps >= 0")

    def to_dict(self) -> dict:
        return {
            "concepts": [c.value for c in self.concepts],
            "segment_len": self.segment_len,
            "n_negatives": self.n_negatives,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "margins": {
                "artist": self.margins.margin_artist,
                "album": self.margins.margin_album,
                "track": self.margins.margin_track,
            },
            "weights": dict(self.weights) if self.weights else None,
            "optimizer": {
                "name": self.optimizer.name,
                "learning_rate": self.optimizer.learning_rate,
                "momentum": self.optimizer.momentum,
                "nesterov": self.optimizer.nesterov,
                "plateau_patience": self.optimizer.plateau_patience,
                "plateau_factor": self.optimizer.plateau_factor,
                "min_lr": self.optimizer.min_lr,
            },
            "val_tuples": self.val_tuples,
            "distinct_negatives": self.distinct_negatives,
            "reduce_negatives": self.reduce_negatives,
            "torch_threads": self.torch_threads,
        }


@dataclass
class TrainState:
    encoder: SegmentEncoder
    optimizer: torch.optim.SGD
    step: int = 0
    lr: float = 0.01
    plateau_best: float | None = None
    plateau_bad: int = 0
    best_val_score: float | None = None
    seed: int = 0


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[dict] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)


def split_for_concept(concept: Concept, splits: Mapping[str, Split]) -> Split:
    key = "artist" if concept is Concept.TRACK else concept.value
    if key not in splits:
        raise ValueError(
            f"{concept.value} concept requires the {key!r} split, got {sorted(splits)}"
        )
    return splits[key]


def _build_samplers(
    config: TrainConfig,
    splits: Mapping[str, Split],
    catalog: CatalogIndex,
    store: FeatureStore,
    regime: Regime,
) -> dict[Concept, TupleSampler]:
    out = {}
    for concept in config.concepts:
        spec = TupleSpec(
            concept=concept,
            segment_len=config.segment_len,
            n_negatives=config.n_negatives,
            regime=regime,
            distinct_negatives=config.distinct_negatives,
        )
        out[concept] = TupleSampler(catalog, split_for_concept(concept, splits), store, spec)
    return out


def _embed_concept_batches(
    encoder: SegmentEncoder,
    batches: dict[Concept, tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> dict[Concept, tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """One fused forward pass over every slot of every concept batch."""
    chunks = []
    layout = []
    for concept, (anchors, positives, negatives) in batches.items():
        b, n = negatives.shape[0], negatives.shape[1]
        chunks.extend([anchors, positives, negatives.reshape(b * n, *negatives.shape[2:])])
        layout.append((concept, b, n))
    stacked = torch.from_numpy(np.concatenate(chunks)).unsqueeze(1)
    z = encoder(stacked)
    out = {}
    offset = 0
    for concept, b, n in layout:
        a = z[offset : offset + b]
        p = z[offset + b : offset + 2 * b]
        neg = z[offset + 2 * b : offset + b * (2 + n)].reshape(b, n, -1)
        out[concept] = (a, p, neg)
        offset += b * (2 + n)
    return out


def _validation_scores(
    encoder: SegmentEncoder,
    samplers: dict[Concept, TupleSampler],
    config: TrainConfig,
    step: int,
) -> tuple[dict[Concept, float], float]:
    """Ranking accuracy per concept on validation-regime tuples, plus total loss."""
    accs: dict[Concept, float] = {}
    total_loss = 0.0
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            for concept, sampler in samplers.items():
                rng = derive_rng(config.seed, f"val/{concept.value}/{step}")
                batch = sampler.batch(config.val_tuples, rng)
                embedded = _embed_concept_batches(
                    encoder,
                    {concept: (batch.anchor_values(), batch.positive_values(), batch.negative_values())},
                )
                a, p, neg = embedded[concept]
                pos_sim = (a * p).sum(dim=1)
                neg_sim = torch.einsum("bd,bnd->bn", a, neg)
                correct = pos_sim > neg_sim.max(dim=1).values
                accs[concept] = float(correct.to(torch.float64).mean())
                losses = batch_margin_loss(
                    a, p, neg, config.margins.margin_for(concept), config.reduce_negatives
                )
                total_loss += float(losses.mean())
    finally:
        encoder.train(was_training)
    return accs, total_loss


def train(
    config: TrainConfig,
    encoder_config: EncoderConfig,
    splits: Mapping[str, Split],
    catalog: CatalogIndex,
    store: FeatureStore,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> TrainResult:
    if config.torch_threads > 0:
        torch.set_num_threads(config.torch_threads)
    if resume is not None:
        state = restore(resume, encoder_config=encoder_config)
    else:
        encoder = init_encoder(encoder_config)
        optimizer = torch.optim.SGD(
            encoder.parameters(),
            lr=config.optimizer.learning_rate,
            momentum=config.optimizer.momentum,
            nesterov=config.optimizer.nesterov,
        )
        state = TrainState(
            encoder=encoder,
            optimizer=optimizer,
            lr=config.optimizer.learning_rate,
            seed=config.seed,
        )
    encoder = state.encoder
    optimizer = state.optimizer
    train_samplers = _build_samplers(config, splits, catalog, store, Regime.TRAIN)
    val_samplers = _build_samplers(config, splits, catalog, store, Regime.VALIDATION)

    metrics_fh = timings_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mode = "a" if resume is not None else "w"
        metrics_fh = open(out / "metrics.jsonl", mode, encoding="utf-8")
        timings_fh = open(out / "timings.jsonl", mode, encoding="utf-8")

    result = TrainResult(state=state)
    started = time.perf_counter()
    try:
        for step in range(state.step, config.steps):
            encoder.train()
            raw_batches = {}
            anchor_ids = {}
            for concept, sampler in train_samplers.items():
                rng = derive_rng(config.seed, f"train/{concept.value}/{step}")
                batch = sampler.batch(config.batch_size, rng)
                raw_batches[concept] = (
                    batch.anchor_values(),
                    batch.positive_values(),
                    batch.negative_values(),
                )
                anchor_ids[concept] = [t.anchor.track_id for t in batch.tuples]
            embedded = _embed_concept_batches(encoder, raw_batches)
            concept_means = {
                concept: batch_margin_loss(
                    a, p, neg, config.margins.margin_for(concept), config.reduce_negatives
                ).mean()
                for concept, (a, p, neg) in embedded.items()
            }
            weights = config.weights or {}
            total = sum(
                float(weights.get(c.value, 1.0)) * m for c, m in concept_means.items()
            )
            total_value = float(total.detach())
            if not math.isfinite(total_value):
                per_concept = {c.value: float(m.detach()) for c, m in concept_means.items()}
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: per-concept {per_concept}, "
                    f"anchor tracks {anchor_ids}"
                )
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            state.step = step + 1
            result.loss_history.append(total_value)

            if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
                accs, val_loss = _validation_scores(encoder, val_samplers, config, step + 1)
                record = {
                    "step": step + 1,
                    "loss_total": total_value,
                    "loss_artist": _maybe(concept_means, Concept.ARTIST),
                    "loss_album": _maybe(concept_means, Concept.ALBUM),
                    "loss_track": _maybe(concept_means, Concept.TRACK),
                    "val_acc_artist": accs.get(Concept.ARTIST),
                    "val_acc_album": accs.get(Concept.ALBUM),
                    "val_acc_track": accs.get(Concept.TRACK),
                }
                result.metrics.append(record)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(record) + "\n")
                    metrics_fh.flush()
                if timings_fh is not None:
                    timings_fh.write(
                        json.dumps(
                            {
                                "step": step + 1,
                                "wall_time_s": round(time.perf_counter() - started, 3),
                                "val_loss": val_loss,
                                "lr": state.lr,
                            }
                        )
                        + "\n"
                    )
                    timings_fh.flush()
                score = sum(accs.values()) / len(accs)
                if state.best_val_score is None or score > state.best_val_score:
                    state.best_val_score = score
                    if out_dir is not None:
                        checkpoint(state, Path(out_dir) / "best.ckpt", config)
                _plateau_update(state, config.optimizer, val_loss)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
        if timings_fh is not None:
            timings_fh.close()
    if out_dir is not None:
        checkpoint(state, Path(out_dir) / "final.ckpt", config)
    return result


def _maybe(means: dict[Concept, torch.Tensor], concept: Concept) -> float | None:
    value = means.get(concept)
    return None if value is None else float(value.detach())


def _plateau_update(state: TrainState, opt_cfg: OptimizerConfig, val_loss: float) -> None:
    if state.plateau_best is None or val_loss < state.plateau_best * (1.0 - 1e-4):
        state.plateau_best = val_loss
        state.plateau_bad = 0
        return
    state.plateau_bad += 1
    if state.plateau_bad > opt_cfg.plateau_patience:
        state.lr = max(state.lr * opt_cfg.plateau_factor, opt_cfg.min_lr)
        for group in state.optimizer.param_groups:
            group["lr"] = state.lr
        state.plateau_bad = 0


def checkpoint(state: TrainState, path: str | Path, config: TrainConfig | None = None) -> None:
    """Serialize the full training state to the deterministic container."""
    tensors: dict[str, np.ndarray] = {}
    named = dict(state.encoder.named_parameters())
    for name, tensor in state.encoder.state_dict().items():
        tensors[f"param/{name}"] = tensor.detach().numpy()
    for name, param in named.items():
        buf = state.optimizer.state.get(param, {}).get("momentum_buffer")
        if buf is not None:
            tensors[f"momentum/{name}"] = buf.detach().numpy()
    meta = {
        "kind": "train_state",
        "encoder_config": state.encoder.config.to_dict(),
        "train_config": config.to_dict() if config is not None else None,
        "step": state.step,
        "lr": state.lr,
        "plateau_best": state.plateau_best,
        "plateau_bad": state.plateau_bad,
        "best_val_score": state.best_val_score,
        "seed": state.seed,
    }
    write_container(path, meta, tensors)


def restore(path: str | Path, encoder_config: EncoderConfig | None = None) -> TrainState:
    """Rebuild a TrainState; continuing from it matches an uninterrupted run."""
    meta, tensors = read_container(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path}: not a training checkpoint")
    stored_config = EncoderConfig.from_dict(meta["encoder_config"])
    if encoder_config is not None and stored_config != encoder_config:
        raise CheckpointError(
            f"{path}: checkpoint encoder config does not match the requested one"
        )
    encoder = init_encoder(stored_config)
    state_dict = {
        name[len("param/") :]: torch.from_numpy(arr)
        for name, arr in tensors.items()
        if name.startswith("param/")
    }
    encoder.load_state_dict(state_dict)
    train_cfg = meta.get("train_config") or {}
    opt_meta = train_cfg.get("optimizer") or {}
    optimizer = torch.optim.SGD(
        encoder.parameters(),
        lr=meta["lr"],
        momentum=opt_meta.get("momentum", 0.9),
        nesterov=opt_meta.get("nesterov", True),
    )
    for name, param in encoder.named_parameters():
        key = f"momentum/{name}"
        if key in tensors:
            optimizer.state[param] = {"momentum_buffer": torch.from_numpy(tensors[key].copy())}
    return TrainState(
        encoder=encoder,
        optimizer=optimizer,
        step=meta["step"],
        lr=meta["lr"],
        plateau_best=meta["plateau_best"],
        plateau_bad=meta["plateau_bad"],
        best_val_score=meta["best_val_score"],
        seed=meta["seed"],
    )
