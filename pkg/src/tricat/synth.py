"""Synthetic hierarchical catalogs with controllable separability.

Each artist gets a latent centroid, albums scatter around their artist,
tracks around their album, and every frame is a fixed random linear
readout of (track centroid + frame noise). With the default dispersion
ordering (artist > album > track > frame) the three similarity concepts
are recoverable from features by construction, which makes the generator
usable as a ground-truth oracle for training and evaluation tests.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .catalog import CatalogIndex, TrackRecord, build_index
from .features import FeatureStore, write_features
from .seeding import derive_rng


@dataclass(frozen=True)
class HierarchyParams:
    n_artists: int = 100
    albums_per_artist: int = 2
    tracks_per_album: int = 10
    n_frames: int = 80
    n_bins: int = 16
    latent_dim: int = 32
    sigma_artist: float = 2.0
    sigma_album: float = 1.0
    sigma_track: float = 0.5
    sigma_frame: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_artists", "albums_per_artist", "tracks_per_album",
                     "n_frames", "n_bins", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        sigmas = (self.sigma_artist, self.sigma_album, self.sigma_track, self.sigma_frame)
        if any(s < 0 for s in sigmas):
            raise ValueError(f"sigmas must be non-negative, got {sigmas}")
        if not (self.sigma_artist > self.sigma_album > self.sigma_track > self.sigma_frame):
            warnings.warn(
                "dispersion ordering sigma_artist > sigma_album > sigma_track > "
                f"sigma_frame does not hold for {sigmas}; concepts may not be separable",
                stacklevel=2,
            )

    @property
    def n_tracks(self) -> int:
        return self.n_artists * self.albums_per_artist * self.tracks_per_album


def _ids(params: HierarchyParams) -> list[tuple[str, str, str]]:
    out = []
    for a in range(params.n_artists):
        artist = f"a{a:05d}"
        for b in range(params.albums_per_artist):
            album = f"{artist}_b{b:02d}"
            for t in range(params.tracks_per_album):
                out.append((artist, album, f"{album}_t{t:02d}"))
    return out


def _centroids(params: HierarchyParams) -> tuple[dict, dict, dict, np.ndarray]:
    """Latent centroids per level plus the frame readout matrix."""
    dim = params.latent_dim
    rng_a = derive_rng(params.seed, "synth/artist-centroids")
    rng_b = derive_rng(params.seed, "synth/album-offsets")
    rng_t = derive_rng(params.seed, "synth/track-offsets")
    readout = derive_rng(params.seed, "synth/readout").normal(
        0.0, 1.0 / np.sqrt(dim), size=(params.n_bins, dim)
    )
    artist_c: dict[str, np.ndarray] = {}
    album_c: dict[str, np.ndarray] = {}
    track_c: dict[str, np.ndarray] = {}
    for artist, album, track in _ids(params):
        if artist not in artist_c:
            artist_c[artist] = rng_a.normal(0.0, params.sigma_artist, size=dim)
        if album not in album_c:
            album_c[album] = artist_c[artist] + rng_b.normal(0.0, params.sigma_album, size=dim)
        track_c[track] = album_c[album] + rng_t.normal(0.0, params.sigma_track, size=dim)
    return artist_c, album_c, track_c, readout


def track_frames(params: HierarchyParams, track_id: str, centroid: np.ndarray,
                 readout: np.ndarray) -> np.ndarray:
    rng = derive_rng(params.seed, f"synth/frames/{track_id}")
    noise = rng.normal(0.0, params.sigma_frame, size=(params.n_frames, params.latent_dim))
    return ((centroid + noise) @ readout.T).astype(np.float32)


def generate_catalog(
    params: HierarchyParams, out_dir: str | Path, write_feature_files: bool = True
) -> CatalogIndex:
    """Emit metadata.csv, per-track TFM1 files, and hierarchy.json.

    ``write_feature_files=False`` emits metadata only, for split- and
    scale-level tests that never touch feature content.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features_dir = out / "features"
    if write_feature_files:
        features_dir.mkdir(exist_ok=True)
    artist_c, _, track_c, readout = _centroids(params)

    records: list[TrackRecord] = []
    rows: list[list[str]] = []
    for artist, album, track in _ids(params):
        ref = f"features/{track}.tfm"
        if write_feature_files:
            write_features(features_dir / f"{track}.tfm", track_frames(params, track, track_c[track], readout))
        rows.append([track, artist, album, ref, str(params.n_frames)])
        records.append(TrackRecord(track, artist, album, str(out / ref), params.n_frames))

    with open(out / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["track_id", "artist_id", "album_id", "feature_ref", "n_frames"])
        writer.writerows(rows)

    hierarchy = {
        "params": asdict(params),
        "artist_centroids": {a: [float(x) for x in c] for a, c in sorted(artist_c.items())},
    }
    (out / "hierarchy.json").write_text(
        json.dumps(hierarchy, indent=2, sort_keys=True), encoding="utf-8"
    )
    return build_index(records)


@dataclass(frozen=True)
class SeparationStats:
    within_track: float
    within_album: float
    within_artist: float
    between_artist: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.within_track, self.within_album, self.within_artist, self.between_artist)


def hierarchy_separation(
    catalog: CatalogIndex,
    store: FeatureStore,
    pairs_per_level: int = 2000,
    seed: int = 0,
) -> SeparationStats:
    """Mean frame-to-frame distance at each hierarchy level.

    Levels: same track (different frames), same album (different tracks),
    same artist (different albums), different artists. Pairs are sampled
    uniformly per level with a seeded generator.
    """
    rng = derive_rng(seed, "synth/separation")
    tracks = sorted(catalog.by_id)
    artists = catalog.artist_ids
    multi_track_albums = [a for a in catalog.album_ids if len(catalog.by_album[a]) >= 2]
    albums_by_artist = {
        a: sorted({catalog.album_of(t) for t in catalog.by_artist[a]}) for a in artists
    }
    multi_album_artists = [a for a in artists if len(albums_by_artist[a]) >= 2]

    def frame(track_id: str, idx: int) -> np.ndarray:
        return store.get(catalog.by_id[track_id].feature_ref).values[idx].astype(np.float64)

    def rand_frame(track_id: str) -> np.ndarray:
        n = catalog.by_id[track_id].n_frames
        return frame(track_id, int(rng.integers(n)))

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    sums = np.zeros(4)
    counts = np.zeros(4, dtype=int)
    for _ in range(pairs_per_level):
        # same track
        t = pick(tracks)
        n = catalog.by_id[t].n_frames
        if n >= 2:
            i = int(rng.integers(n))
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            sums[0] += float(np.linalg.norm(frame(t, i) - frame(t, j)))
            counts[0] += 1
        # same album, different tracks
        if multi_track_albums:
            album = pick(multi_track_albums)
            t1, t2 = rng.choice(len(catalog.by_album[album]), size=2, replace=False)
            sums[1] += float(np.linalg.norm(
                rand_frame(catalog.by_album[album][t1]) - rand_frame(catalog.by_album[album][t2])
            ))
            counts[1] += 1
        # same artist, different albums
        if multi_album_artists:
            artist = pick(multi_album_artists)
            album_ids = albums_by_artist[artist]
            a1, a2 = rng.choice(len(album_ids), size=2, replace=False)
            sums[2] += float(np.linalg.norm(
                rand_frame(pick(catalog.by_album[album_ids[a1]]))
                - rand_frame(pick(catalog.by_album[album_ids[a2]]))
            ))
            counts[2] += 1
        # different artists
        if len(artists) >= 2:
            a1, a2 = rng.choice(len(artists), size=2, replace=False)
            sums[3] += float(np.linalg.norm(
                rand_frame(pick(catalog.by_artist[artists[a1]]))
                - rand_frame(pick(catalog.by_artist[artists[a2]]))
            ))
            counts[3] += 1
    means = [float(s / c) if c else 0.0 for s, c in zip(sums, counts)]
    return SeparationStats(*means)


def genre_labels(
    hierarchy_path: str | Path, n_classes: int = 5, seed: int = 0
) -> dict[str, str]:
    """Cluster artist centroids into genre-like classes (k-means)."""
    from sklearn.cluster import KMeans

    payload = json.loads(Path(hierarchy_path).read_text(encoding="utf-8"))
    artists = sorted(payload["artist_centroids"])
    centroids = np.array([payload["artist_centroids"][a] for a in artists])
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    if n_classes > len(artists):
        raise ValueError(f"n_classes {n_classes} exceeds artist count {len(artists)}")
    km = KMeans(n_clusters=n_classes, n_init=10, random_state=seed % (2**32))
    assignment = km.fit_predict(centroids)
    return {a: f"g{int(k)}" for a, k in zip(artists, assignment)}


def write_probe_csvs(
    catalog: CatalogIndex,
    labels_by_artist: dict[str, str],
    out_dir: str | Path,
    train_fraction: float = 0.5,
    seed: int = 0,
) -> tuple[Path, Path]:
    """Write probe train/test CSVs (feature_ref,label) with a seeded song split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(seed, "synth/probe-split")
    rows = sorted(
        (rec.feature_ref, labels_by_artist[rec.artist_id]) for rec in catalog.tracks
    )
    order = rng.permutation(len(rows))
    n_train = int(round(train_fraction * len(rows)))
    train_rows = sorted(rows[i] for i in order[:n_train])
    test_rows = sorted(rows[i] for i in order[n_train:])
    paths = (out / "probe_train.csv", out / "probe_test.csv")
    for path, subset in zip(paths, (train_rows, test_rows)):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_ref", "label"])
            writer.writerows(subset)
    return paths
