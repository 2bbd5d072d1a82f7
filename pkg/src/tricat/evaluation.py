"""Evaluation protocols: hold-out ranking, transfer probe, ablations.

Hold-out prediction asks the encoder to rank the true positive above N
negatives drawn under the hold-out regime; chance is 1/(N+1). The transfer
probe freezes the encoder, embeds whole songs, and fits an L2-regularized
multinomial logistic classifier on an external labeled set. Ablation
harnesses train one model per axis value per seed and tabulate both
metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .catalog import CatalogIndex, Split, build_album_split, build_artist_split
from .config import RunConfig, build_encoder_config, build_train_config, to_plain
from .features import FeatureMatrix, FeatureStore
from .sampler import Concept, Regime, TupleSampler, TupleSpec
from .seeding import derive_rng, derive_seed
from .trainer import split_for_concept, train


class SegmentEmbedder(Protocol):
    def embed_segments(self, values: np.ndarray) -> np.ndarray: ...


class SongEmbedder(Protocol):
    def embed_song(self, feature: FeatureMatrix, hop: int | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class HoldoutResult:
    concept: Concept
    n_negatives: int
    trials: int
    correct: int
    accuracy: float
    seed: int


def holdout_accuracy(
    encoder: SegmentEmbedder,
    split: Split,
    concept: Concept | str,
    *,
    catalog: CatalogIndex,
    store: FeatureStore,
    segment_len: int,
    n_negatives: int = 4,
    trials: int = 2000,
    seed: int = 0,
    batch_tuples: int = 256,
    return_trials: bool = False,
) -> HoldoutResult | tuple[HoldoutResult, list[dict]]:
    """Fraction of trials where the positive is the unique best match.

    A trial embeds anchor, positive, and N negatives, then predicts the
    candidate most similar to the anchor; ties count as incorrect.
    """
    concept = Concept(concept)
    sampler = TupleSampler(
        catalog,
        split,
        store,
        TupleSpec(concept, segment_len, n_negatives, Regime.HOLDOUT),
    )
    rng = derive_rng(seed, f"holdout/{concept.value}")
    correct = 0
    logged: list[dict] = []
    remaining = trials
    while remaining > 0:
        take = min(batch_tuples, remaining)
        batch = sampler.batch(take, rng)
        anchors = batch.anchor_values()
        positives = batch.positive_values()
        negatives = batch.negative_values()
        b, n = negatives.shape[0], negatives.shape[1]
        stacked = np.concatenate(
            [anchors, positives, negatives.reshape(b * n, *negatives.shape[2:])]
        )
        z = encoder.embed_segments(stacked)
        a = z[:b]
        p = z[b : 2 * b]
        neg = z[2 * b :].reshape(b, n, -1)
        pos_sim = np.einsum("bd,bd->b", a, p)
        neg_sim = np.einsum("bd,bnd->bn", a, neg)
        wins = pos_sim > neg_sim.max(axis=1)
        correct += int(wins.sum())
        if return_trials:
            for i, t in enumerate(batch.tuples):
                logged.append(
                    {
                        "anchor": t.anchor.source,
                        "positive": t.positive.source,
                        "negatives": [s.source for s in t.negatives],
                        "pos_sim": float(pos_sim[i]),
                        "neg_sims": [float(x) for x in neg_sim[i]],
                        "correct": bool(wins[i]),
                    }
                )
        remaining -= take
    result = HoldoutResult(
        concept=concept,
        n_negatives=n_negatives,
        trials=trials,
        correct=correct,
        accuracy=correct / trials,
        seed=seed,
    )
    return (result, logged) if return_trials else result


@dataclass(frozen=True)
class ProbeDataset:
    items: tuple[tuple[str, str], ...]  # (feature_ref, label)
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError(f"probe dataset needs >= 2 classes, got {list(self.classes)}")
        vocab = set(self.classes)
        for ref, label in self.items:
            if label not in vocab:
                raise ValueError(f"label {label!r} of {ref} not in class vocabulary")


def load_probe_csv(path: str | Path, classes: Sequence[str] | None = None) -> ProbeDataset:
    path = Path(path)
    base = path.parent
    items = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature_ref", "label"]:
            raise ValueError(f"{path}: expected header feature_ref,label, got {header}")
        for ref, label in reader:
            resolved = ref if Path(ref).is_absolute() else str(base / ref)
            items.append((resolved, label))
    if classes is None:
        classes = sorted({label for _, label in items})
    return ProbeDataset(items=tuple(items), classes=tuple(classes))


class RawMeanEmbedder:
    """Baseline song representation: the mean frame vector, no learning."""

    def embed_song(self, feature: FeatureMatrix, hop: int | None = None) -> np.ndarray:
        return feature.values.mean(axis=0).astype(np.float32)


@dataclass(frozen=True)
class ProbeConfig:
    c_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
    val_fraction: float = 0.25
    hop: int | None = None
    max_iter: int = 2000
    seed: int = 0


def transfer_probe(
    encoder: SongEmbedder,
    train_set: ProbeDataset,
    test_set: ProbeDataset,
    *,
    store: FeatureStore,
    config: ProbeConfig = ProbeConfig(),
) -> float:
    """Top-1 accuracy of a linear softmax probe on frozen song embeddings.

    The L2 strength is chosen on a stratified validation fold carved from
    the train set, then the probe is refit on the full train set. Inputs
    are centered and scaled by a single global RMS so the probe is
    invariant to orthogonal rotations of the embedding space.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    train_classes = {label for _, label in train_set.items}
    for cls in train_set.classes:
        if cls not in train_classes:
            raise ValueError(f"class {cls!r} has no examples in the probe train set")
    for _, label in test_set.items:
        if label not in train_classes:
            raise ValueError(f"test label {label!r} absent from the probe train set")

    def embed_all(dataset: ProbeDataset) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack(
            [encoder.embed_song(store.get(ref), config.hop) for ref, _ in dataset.items]
        ).astype(np.float64)
        ys = np.array([label for _, label in dataset.items])
        return xs, ys

    x_train, y_train = embed_all(train_set)
    x_test, y_test = embed_all(test_set)
    center = x_train.mean(axis=0)
    scale = float(np.sqrt(np.mean((x_train - center) ** 2)))
    if scale < 1e-12:
        scale = 1.0
    x_train = (x_train - center) / scale
    x_test = (x_test - center) / scale

    x_fit, x_val, y_fit, y_val = train_test_split(
        x_train,
        y_train,
        test_size=config.val_fraction,
        stratify=y_train,
        random_state=derive_seed(config.seed, "probe/val-fold") % (2**32),
    )
    best_c, best_val = None, -1.0
    for c in config.c_grid:
        clf = LogisticRegression(C=c, max_iter=config.max_iter)
        clf.fit(x_fit, y_fit)
        val_acc = float((clf.predict(x_val) == y_val).mean())
        if val_acc > best_val + 1e-12:
            best_c, best_val = c, val_acc
    final = LogisticRegression(C=best_c, max_iter=config.max_iter)
    final.fit(x_train, y_train)
    return float((final.predict(x_test) == y_test).mean())


@dataclass(frozen=True)
class ReportRow:
    axis: int
    concept_or_dataset: str
    accuracy: float
    seed: int


@dataclass
class MetricsReport:
    rows: list[ReportRow] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "concept_or_dataset", "accuracy", "seed"])
            for row in self.rows:
                writer.writerow([row.axis, row.concept_or_dataset, row.accuracy, row.seed])

    def to_json(self, path: str | Path) -> None:
        payload = {
            "rows": [
                {
                    "axis": r.axis,
                    "concept_or_dataset": r.concept_or_dataset,
                    "accuracy": r.accuracy,
                    "seed": r.seed,
                }
                for r in self.rows
            ],
            "config_echo": self.config_echo,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    def accuracies(self, concept_or_dataset: str) -> dict[tuple[int, int], float]:
        """(axis, seed) -> accuracy for one metric column."""
        return {
            (r.axis, r.seed): r.accuracy
            for r in self.rows
            if r.concept_or_dataset == concept_or_dataset
        }


def _evaluate_trained(
    encoder,
    axis_value: int,
    seed: int,
    splits: Mapping[str, Split],
    cfg: RunConfig,
    catalog: CatalogIndex,
    store: FeatureStore,
    probe_sets: tuple[ProbeDataset, ProbeDataset] | None,
    trials: int,
) -> list[ReportRow]:
    rows = []
    accs = []
    for concept in (Concept(c) for c in cfg.train.concepts):
        result = holdout_accuracy(
            encoder,
            split_for_concept(concept, splits),
            concept,
            catalog=catalog,
            store=store,
            segment_len=cfg.catalog.segment_len,
            n_negatives=cfg.eval.n_negatives,
            trials=trials,
            seed=seed,
        )
        rows.append(ReportRow(axis_value, concept.value, result.accuracy, seed))
        accs.append(result.accuracy)
    rows.append(ReportRow(axis_value, "holdout_mean", sum(accs) / len(accs), seed))
    if probe_sets is not None:
        probe_acc = transfer_probe(
            encoder,
            probe_sets[0],
            probe_sets[1],
            store=store,
            config=ProbeConfig(
                c_grid=cfg.eval.probe_c_grid,
                val_fraction=cfg.eval.probe_val_fraction,
                hop=cfg.eval.hop or None,
                max_iter=cfg.eval.probe_max_iter,
                seed=seed,
            ),
        )
        rows.append(ReportRow(axis_value, "genre_probe", probe_acc, seed))
    return rows


def _load_probe_sets(cfg: RunConfig) -> tuple[ProbeDataset, ProbeDataset] | None:
    if not cfg.eval.probe_train or not cfg.eval.probe_test:
        return None
    return load_probe_csv(cfg.eval.probe_train), load_probe_csv(cfg.eval.probe_test)


def _train_one(
    cfg: RunConfig,
    seed: int,
    splits: Mapping[str, Split],
    catalog: CatalogIndex,
    store: FeatureStore,
    **train_overrides,
):
    sample_ref = catalog.tracks[0].feature_ref
    encoder_config = build_encoder_config(cfg, store.get(sample_ref).n_bins, seed=seed)
    train_config = build_train_config(
        cfg,
        seed=seed,
        steps=cfg.ablate.steps,
        eval_every=cfg.ablate.eval_every,
        **train_overrides,
    )
    result = train(train_config, encoder_config, splits, catalog, store)
    return result.state.encoder


def ablate_negatives(
    cfg: RunConfig,
    values: Sequence[int],
    seeds: Sequence[int],
    *,
    catalog: CatalogIndex,
    store: FeatureStore,
) -> MetricsReport:
    """Train one model per negative count per seed; tabulate both metrics."""
    if not values:
        raise ValueError("ablate_negatives needs at least one value")
    if any(v < 1 for v in values):
        raise ValueError(f"negative counts must be >= 1, got {list(values)}")
    probe_sets = _load_probe_sets(cfg)
    report = MetricsReport(
        config_echo={"axis": "negatives", "values": list(values), "config": to_plain(cfg)}
    )
    for seed in seeds:
        splits = {
            "artist": build_artist_split(catalog, cfg.split.n_artists, seed),
            "album": build_album_split(catalog, cfg.split.n_albums, seed),
        }
        for value in values:
            encoder = _train_one(
                cfg, seed, splits, catalog, store, n_negatives=int(value)
            )
            report.rows.extend(
                _evaluate_trained(
                    encoder, int(value), seed, splits, cfg, catalog, store,
                    probe_sets, cfg.ablate.trials,
                )
            )
    return report


def ablate_scale(
    cfg: RunConfig,
    artist_counts: Sequence[int],
    seeds: Sequence[int],
    *,
    catalog: CatalogIndex,
    store: FeatureStore,
) -> MetricsReport:
    """Train per artist count with n_albums = 2 * n_artists; tabulate metrics."""
    if not artist_counts:
        raise ValueError("ablate_scale needs at least one artist count")
    probe_sets = _load_probe_sets(cfg)
    report = MetricsReport(
        config_echo={
            "axis": "scale",
            "artist_counts": list(artist_counts),
            "n_albums_by_count": {int(n): 2 * int(n) for n in artist_counts},
            "config": to_plain(cfg),
        }
    )
    for seed in seeds:
        for count in artist_counts:
            splits = {
                "artist": build_artist_split(catalog, int(count), seed),
                "album": build_album_split(catalog, 2 * int(count), seed),
            }
            encoder = _train_one(cfg, seed, splits, catalog, store)
            report.rows.extend(
                _evaluate_trained(
                    encoder, int(count), seed, splits, cfg, catalog, store,
                    probe_sets, cfg.ablate.trials,
                )
            )
    return report
