"""Command-line entry point: synth, split, train, eval-holdout, eval-transfer, ablate.

Each command is idempotent given its config and seed, writes its outputs
under a subdirectory of the output root, and drops the resolved config
echo next to them. Errors surface as one JSON line on stderr naming the
failing module, with a nonzero exit code.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .catalog import (
    CatalogError,
    SplitShortfallError,
    build_album_split,
    build_artist_split,
    load_catalog,
    save_split,
)
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    build_encoder_config,
    build_hierarchy_params,
    build_train_config,
    load_config,
    write_echo,
)
from .evaluation import (
    ProbeConfig,
    ablate_negatives,
    ablate_scale,
    holdout_accuracy,
    load_probe_csv,
    transfer_probe,
)
from .features import FeatureFormatError, FeatureStore
from .model import CheckpointError, EncoderConfigError
from .sampler import Concept, SamplingError
from .seeding import derive_seed
from .synth import generate_catalog, genre_labels, write_probe_csvs
from .trainer import TrainingDivergedError, restore, split_for_concept, train

_MODULE_OF = {
    CatalogError: "catalog",
    SplitShortfallError: "catalog",
    FeatureFormatError: "features",
    SamplingError: "sampler",
    EncoderConfigError: "model",
    CheckpointError: "trainer",
    TrainingDivergedError: "trainer",
    ConfigError: "config",
}


def _fail(exc: Exception) -> None:
    module = next(
        (name for klass, name in _MODULE_OF.items() if isinstance(exc, klass)), "tricat"
    )
    sys.stderr.write(json.dumps({"error": str(exc), "module": module}) + "\n")
    sys.exit(1)


def _resolve_config(config_path: str | None, sets: tuple[str, ...], out: str | None,
                    seed: int | None) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    overrides = list(sets)
    if out is not None:
        overrides.append(f"out_dir={out}")
    if seed is not None:
        overrides.append(f"seed={seed}")
    cfg = apply_overrides(cfg, overrides)
    if not cfg.out_dir:
        cfg = apply_overrides(cfg, [f"out_dir={os.environ.get('TRICAT_OUT', 'tricat-out')}"])
    return cfg


def _with_metadata(cfg: RunConfig, path: str | Path | None = None) -> RunConfig:
    """Materialize the metadata path into the config so echoes are self-contained."""
    if path is None:
        if cfg.catalog.metadata:
            return cfg
        path = Path(cfg.out_dir) / "catalog" / "metadata.csv"
    return apply_overrides(cfg, [f"catalog.metadata={path}"])


def _load(cfg: RunConfig):
    catalog = load_catalog(Path(cfg.catalog.metadata), cfg.catalog.segment_len)
    return catalog, FeatureStore()


def _build_splits(cfg: RunConfig, catalog):
    return {
        "artist": build_artist_split(catalog, cfg.split.n_artists, cfg.seed),
        "album": build_album_split(catalog, cfg.split.n_albums, cfg.seed),
    }


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="YAML config file; defaults apply when omitted.")(f)
    f = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                     help="Override a config key (repeatable); flags win over the file.")(f)
    f = click.option("--out", default=None, help="Output root (else config, else $TRICAT_OUT).")(f)
    f = click.option("--seed", type=int, default=None, help="Root seed override.")(f)
    return f


@click.group()
def main() -> None:
    """Catalog-metadata similarity embeddings: data, training, evaluation."""


@main.command()
@_common
def synth(config_path, sets, out, seed) -> None:
    """Generate a synthetic catalog, features, and genre probe CSVs."""
    try:
        cfg = _resolve_config(config_path, sets, out, seed)
        out_root = Path(cfg.out_dir)
        catalog_dir = out_root / "catalog"
        cfg = _with_metadata(cfg, catalog_dir / "metadata.csv")
        catalog = generate_catalog(build_hierarchy_params(cfg), catalog_dir)
        labels = genre_labels(
            catalog_dir / "hierarchy.json",
            n_classes=cfg.eval.genre_classes,
            seed=derive_seed(cfg.seed, "genres"),
        )
        probe_train, probe_test = write_probe_csvs(catalog, labels, out_root / "probe", seed=cfg.seed)
        cfg = apply_overrides(
            cfg, [f"eval.probe_train={probe_train}", f"eval.probe_test={probe_test}"]
        )
        write_echo(cfg, catalog_dir)
        click.echo(f"catalog: {len(catalog.tracks)} tracks under {catalog_dir}")
    except Exception as exc:  # noqa: BLE001 - single structured exit point
        _fail(exc)


@main.command()
@_common
def split(config_path, sets, out, seed) -> None:
    """Build the artist and album splits and write them as JSON."""
    try:
        cfg = _with_metadata(_resolve_config(config_path, sets, out, seed))
        catalog, _ = _load(cfg)
        splits = _build_splits(cfg, catalog)
        splits_dir = Path(cfg.out_dir) / "splits"
        splits_dir.mkdir(parents=True, exist_ok=True)
        for basis, s in splits.items():
            save_split(s, splits_dir / f"{basis}.json")
        write_echo(cfg, splits_dir)
        click.echo(f"splits: {len(splits['artist'].groups)} artists, "
                   f"{len(splits['album'].groups)} albums under {splits_dir}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="train")
@_common
@click.option("--checkpoint", "resume_path", type=click.Path(exists=True), default=None,
              help="Resume training from this checkpoint.")
def train_cmd(config_path, sets, out, seed, resume_path) -> None:
    """Train the shared encoder on the configured concepts."""
    try:
        cfg = _with_metadata(_resolve_config(config_path, sets, out, seed))
        catalog, store = _load(cfg)
        splits = _build_splits(cfg, catalog)
        encoder_config = build_encoder_config(cfg, store.get(catalog.tracks[0].feature_ref).n_bins)
        train_dir = Path(cfg.out_dir) / "train"
        result = train(
            build_train_config(cfg),
            encoder_config,
            splits,
            catalog,
            store,
            out_dir=train_dir,
            resume=resume_path,
        )
        write_echo(cfg, train_dir)
        last = result.metrics[-1] if result.metrics else {}
        click.echo(f"trained {result.state.step} steps; last metrics: {last}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="eval-holdout")
@_common
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
def eval_holdout(config_path, sets, out, seed, checkpoint_path) -> None:
    """Hold-out positive/negative ranking accuracy per concept."""
    try:
        cfg = _with_metadata(_resolve_config(config_path, sets, out, seed))
        catalog, store = _load(cfg)
        splits = _build_splits(cfg, catalog)
        encoder = restore(checkpoint_path).encoder
        results = []
        for concept in (Concept(c) for c in cfg.train.concepts):
            r = holdout_accuracy(
                encoder,
                split_for_concept(concept, splits),
                concept,
                catalog=catalog,
                store=store,
                segment_len=cfg.catalog.segment_len,
                n_negatives=cfg.eval.n_negatives,
                trials=cfg.eval.trials,
                seed=cfg.seed,
            )
            results.append(r)
        out_dir = Path(cfg.out_dir) / "holdout"
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = [
            {
                "concept": r.concept.value,
                "n_negatives": r.n_negatives,
                "trials": r.trials,
                "correct": r.correct,
                "accuracy": r.accuracy,
                "seed": r.seed,
            }
            for r in results
        ]
        (out_dir / "results.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
        with open(out_dir / "results.csv", "w", encoding="utf-8") as fh:
            fh.write("concept,n_negatives,trials,correct,accuracy,seed\n")
            for r in results:
                fh.write(f"{r.concept.value},{r.n_negatives},{r.trials},"
                         f"{r.correct},{r.accuracy},{r.seed}\n")
        write_echo(cfg, out_dir)
        for r in results:
            click.echo(f"{r.concept.value}: {r.accuracy:.3f} over {r.trials} trials")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="eval-transfer")
@_common
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--probe-train", "probe_train_path", type=click.Path(exists=True), default=None)
@click.option("--probe-test", "probe_test_path", type=click.Path(exists=True), default=None)
def eval_transfer(config_path, sets, out, seed, checkpoint_path, probe_train_path,
                  probe_test_path) -> None:
    """Linear softmax probe on frozen song embeddings."""
    try:
        cfg = _with_metadata(_resolve_config(config_path, sets, out, seed))
        _, store = _load(cfg)
        encoder = restore(checkpoint_path).encoder
        train_csv = probe_train_path or cfg.eval.probe_train
        test_csv = probe_test_path or cfg.eval.probe_test
        if not train_csv or not test_csv:
            raise ConfigError(
                "probe CSVs required: pass --probe-train/--probe-test or set "
                "eval.probe_train / eval.probe_test"
            )
        accuracy = transfer_probe(
            encoder,
            load_probe_csv(train_csv),
            load_probe_csv(test_csv),
            store=store,
            config=ProbeConfig(
                c_grid=cfg.eval.probe_c_grid,
                val_fraction=cfg.eval.probe_val_fraction,
                hop=cfg.eval.hop or None,
                max_iter=cfg.eval.probe_max_iter,
                seed=cfg.seed,
            ),
        )
        out_dir = Path(cfg.out_dir) / "transfer"
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.json").write_text(
            json.dumps({"accuracy": accuracy, "probe_train": str(train_csv),
                        "probe_test": str(test_csv), "seed": cfg.seed}, indent=2),
            encoding="utf-8",
        )
        write_echo(cfg, out_dir)
        click.echo(f"transfer probe accuracy: {accuracy:.3f}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@_common
@click.option("--axis", type=click.Choice(["negatives", "scale"]), default=None,
              help="Ablation axis (defaults to ablate.axis from the config).")
def ablate(config_path, sets, out, seed, axis) -> None:
    """Sweep negative counts or training-set scale; one model per cell."""
    try:
        cfg = _with_metadata(_resolve_config(config_path, sets, out, seed))
        catalog, store = _load(cfg)
        axis = axis or cfg.ablate.axis
        if axis == "negatives":
            report = ablate_negatives(
                cfg, cfg.ablate.values, cfg.ablate.seeds, catalog=catalog, store=store
            )
        else:
            report = ablate_scale(
                cfg, cfg.ablate.artist_counts, cfg.ablate.seeds, catalog=catalog, store=store
            )
        out_dir = Path(cfg.out_dir) / "ablate"
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / f"{axis}.csv")
        report.to_json(out_dir / f"{axis}.json")
        write_echo(cfg, out_dir)
        click.echo(f"ablation over {axis}: {len(report.rows)} rows under {out_dir}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


if __name__ == "__main__":
    main()
