"""Scikit-learn style wrapper around the catalog-supervised encoder.

``SimilarityEmbedder.fit`` takes a catalog (index or metadata CSV path),
builds the artist/album splits, and trains the shared encoder;
``transform`` maps feature matrices or feature-file paths to song-level
embeddings, ready for any downstream sklearn classifier.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .catalog import CatalogIndex, build_album_split, build_artist_split, load_catalog
from .features import FeatureMatrix, FeatureStore
from .losses import MarginConfig
from .model import default_encoder_config
from .seeding import derive_seed
from .trainer import OptimizerConfig, TrainConfig, train


class SimilarityEmbedder(BaseEstimator, TransformerMixin):
    """Learn song embeddings from artist/album/track co-membership.

    Parameters
    ----------
    concepts : tuple of str, default ("artist", "album", "track")
        Which similarity concepts contribute loss terms.
    n_artists, n_albums : int or None
        Group counts for the two splits; ``None`` uses every qualifying
        group in the catalog.
    segment_len : int, default 16
        Window length in frames fed to the encoder.
    n_negatives : int, default 4
        Negatives per tuple during training.
    steps : int, default 2500
        Optimizer updates.
    batch_size : int, default 8
        Tuples per concept per step.
    learning_rate, momentum : float
        SGD settings (Nesterov momentum).
    margins : tuple of float, default (0.4, 0.25, 0.1)
        Hinge margins for artist, album, and track losses.
    embedding_dim : int, default 256
        Output dimensionality.
    base_filters : tuple of int
        Per-block conv filter counts before the 2x multiplier.
    hop : int or None
        Song-window stride at transform time; ``None`` means segment_len.
    eval_every : int, default 250
        Validation cadence during fit.
    seed : int, default 0
        Root seed for splits, sampling, and initialization.

    Attributes
    ----------
    encoder_ : SegmentEncoder
        The trained shared encoder.
    splits_ : dict
        The artist/album splits used for training.
    metrics_ : list of dict
        Validation metrics recorded during fit.
    """

    def __init__(
        self,
        concepts: tuple[str, ...] = ("artist", "album", "track"),
        n_artists: int | None = None,
        n_albums: int | None = None,
        segment_len: int = 16,
        n_negatives: int = 4,
        steps: int = 2500,
        batch_size: int = 8,
        learning_rate: float = 0.01,
        momentum: float = 0.9,
        margins: tuple[float, float, float] = (0.4, 0.25, 0.1),
        embedding_dim: int = 256,
        base_filters: tuple[int, ...] = (4, 8, 16, 32),
        hop: int | None = None,
        eval_every: int = 250,
        seed: int = 0,
    ) -> None:
        self.concepts = concepts
        self.n_artists = n_artists
        self.n_albums = n_albums
        self.segment_len = segment_len
        self.n_negatives = n_negatives
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.margins = margins
        self.embedding_dim = embedding_dim
        self.base_filters = base_filters
        self.hop = hop
        self.eval_every = eval_every
        self.seed = seed

    def _catalog(self, X) -> CatalogIndex:
        if isinstance(X, CatalogIndex):
            return X
        if isinstance(X, (str, Path)):
            return load_catalog(X, self.segment_len)
        raise TypeError(
            f"fit expects a CatalogIndex or a metadata CSV path, got {type(X).__name__}"
        )

    def fit(self, X, y=None):
        catalog = self._catalog(X)
        store = FeatureStore()
        needs_album = "album" in self.concepts
        splits = {}
        n_artists = self.n_artists
        if n_artists is None:
            n_artists = sum(1 for a in catalog.by_artist.values() if len(a) >= 20)
        splits["artist"] = build_artist_split(catalog, n_artists, self.seed)
        if needs_album:
            n_albums = self.n_albums
            if n_albums is None:
                n_albums = sum(1 for a in catalog.by_album.values() if len(a) >= 10)
            splits["album"] = build_album_split(catalog, n_albums, self.seed)
        n_bins = store.get(catalog.tracks[0].feature_ref).n_bins
        encoder_config = default_encoder_config(
            input_frames=self.segment_len,
            input_bins=n_bins,
            base_filters=tuple(self.base_filters),
            embedding_dim=self.embedding_dim,
            seed=derive_seed(self.seed, "encoder"),
        )
        train_config = TrainConfig(
            concepts=tuple(self.concepts),
            segment_len=self.segment_len,
            n_negatives=self.n_negatives,
            batch_size=self.batch_size,
            steps=self.steps,
            eval_every=self.eval_every,
            seed=self.seed,
            margins=MarginConfig(*self.margins),
            optimizer=OptimizerConfig(
                learning_rate=self.learning_rate, momentum=self.momentum
            ),
        )
        result = train(train_config, encoder_config, splits, catalog, store)
        self.encoder_ = result.state.encoder
        self.splits_ = splits
        self.metrics_ = result.metrics
        return self

    def transform(self, X) -> np.ndarray:
        """Song embeddings for feature matrices, arrays, or TFM1 paths."""
        if not hasattr(self, "encoder_"):
            raise NotFittedError("SimilarityEmbedder must be fitted before transform")
        store = FeatureStore()
        rows = []
        for item in X:
            if isinstance(item, FeatureMatrix):
                feature = item
            elif isinstance(item, np.ndarray):
                feature = FeatureMatrix(values=np.asarray(item, dtype=np.float32))
            elif isinstance(item, (str, Path)):
                feature = store.get(item)
            else:
                raise TypeError(
                    f"transform items must be FeatureMatrix, ndarray, or path, "
                    f"got {type(item).__name__}"
                )
            rows.append(self.encoder_.embed_song(feature, self.hop))
        return np.stack(rows)
